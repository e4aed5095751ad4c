use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rgma_core::archiver::ArchiverError;
use rgma_core::codec::CodecError;
use rgma_core::producer::ProducerError;
use rgma_core::registry::RegistryError;
use rgma_core::sql::SqlError;

use crate::client::ClientError;
use crate::protocol::ErrorBody;

/// An error response: `{"error": message}` with a status code.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

pub type ApiResult<T> = Result<Json<T>, ApiError>;

impl From<SqlError> for ApiError {
    fn from(e: SqlError) -> Self {
        match e {
            SqlError::UnknownTable(_) => Self::not_found(e.to_string()),
            e => Self::bad_request(e.to_string()),
        }
    }
}

impl From<CodecError> for ApiError {
    fn from(e: CodecError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl From<ArchiverError> for ApiError {
    fn from(e: ArchiverError) -> Self {
        Self::bad_request(e.to_string())
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = match e {
            RegistryError::UnknownTable(_) | RegistryError::UnknownId(_) => StatusCode::NOT_FOUND,
            RegistryError::TableClash(_) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<ProducerError> for ApiError {
    fn from(e: ProducerError) -> Self {
        let status = match e {
            ProducerError::Owned => StatusCode::CONFLICT,
            ProducerError::Log(_) | ProducerError::NoHandler => StatusCode::INTERNAL_SERVER_ERROR,
            ProducerError::HandlerTimeout(_) => StatusCode::GATEWAY_TIMEOUT,
            ProducerError::Handler(_) | ProducerError::HandlerInvalid(_) => StatusCode::BAD_GATEWAY,
            ProducerError::Sql(SqlError::UnknownTable(_)) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

/// Upstream failures keep the upstream status; transport failures become 502.
impl From<ClientError> for ApiError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Status { status, message } => {
                Self::new(StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_GATEWAY), message)
            }
            e => Self::new(StatusCode::BAD_GATEWAY, e.to_string()),
        }
    }
}
