use crate::value::Value;

use super::{Call, GenericService, Reply, ServiceContext, ServiceError};

/// Echo reply payload: a single parameter comes back as itself, anything
/// else as the full list.
pub fn echo_value(params: &[Value]) -> Value {
    match params {
        [one] => one.clone(),
        many => Value::List(many.to_vec()),
    }
}

/// Replies to `echo` with its input on `Service.<contract>.response`.
#[derive(Debug, Default)]
pub struct EchoService;

impl GenericService for EchoService {
    fn on_event(&mut self, _ctx: &ServiceContext, call: &Call<'_>) -> Result<Option<Reply>, ServiceError> {
        match call.method {
            "echo" => Ok(Some(Reply::new("response", echo_value(call.params)))),
            other => Err(ServiceError::NoSuchMethod(other.to_string())),
        }
    }
}
