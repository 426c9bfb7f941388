//! Minimal HTTP JSON plumbing shared by the annotator and judge clients:
//! POST with bounded exponential-backoff retry on transport failures.

use std::thread;
use std::time::Duration;

use crate::error::{CotError, Result};

pub const MAX_ATTEMPTS: usize = 3;
const INITIAL_BACKOFF: Duration = Duration::from_millis(50);

/// POST `body` to `url`; retry transport failures (including 5xx) up to
/// MAX_ATTEMPTS with exponential backoff. Returns the parsed response and
/// the number of attempts used. Non-5xx HTTP errors are final.
pub fn post_json_retry(
    url: &str,
    body: &serde_json::Value,
    timeout: Duration,
) -> Result<(serde_json::Value, usize)> {
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let mut delay = INITIAL_BACKOFF;
    let mut last_err = None;
    for attempt in 1..=MAX_ATTEMPTS {
        match agent.post(url).send_json(body) {
            Ok(resp) => {
                let value: serde_json::Value = resp
                    .into_json()
                    .map_err(|e| CotError::Transport(format!("invalid response body: {e}")))?;
                return Ok((value, attempt));
            }
            Err(ureq::Error::Status(code, _)) if code >= 500 => {
                last_err = Some(CotError::Transport(format!("server returned status {code}")));
            }
            Err(ureq::Error::Status(code, _)) => {
                return Err(CotError::Data(format!("server returned status {code}")));
            }
            Err(e) => last_err = Some(CotError::Transport(e.to_string())),
        }
        if attempt < MAX_ATTEMPTS {
            thread::sleep(delay);
            delay *= 2;
        }
    }
    Err(last_err.expect("loop ran at least once"))
}
