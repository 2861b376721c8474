use std::collections::VecDeque;
use std::sync::Mutex;

use tokio::sync::Notify;

use crate::protocol::ServerMessage;

#[derive(Debug, Default)]
struct Queue {
    reliable: VecDeque<String>,
    /// Newest undelivered tick frame; always logically after `reliable`.
    tick: Option<String>,
    closed: bool,
}

/// Outgoing frames for one client. Tick frames coalesce to the newest;
/// other frames are kept in order and never dropped.
#[derive(Debug, Default)]
pub struct Outbox {
    queue: Mutex<Queue>,
    notify: Notify,
}

impl Outbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, msg: &ServerMessage) {
        let text = msg.encode();
        {
            let mut q = self.queue.lock().expect("outbox poisoned");
            if q.closed {
                return;
            }
            if msg.is_reliable() {
                if let Some(tick) = q.tick.take() {
                    q.reliable.push_back(tick);
                }
                q.reliable.push_back(text);
            } else {
                q.tick = Some(text);
            }
        }
        self.notify.notify_one();
    }

    /// No further frames are accepted; `next` drains what is queued and then
    /// returns `None`.
    pub fn close(&self) {
        self.queue.lock().expect("outbox poisoned").closed = true;
        self.notify.notify_one();
    }

    fn pop(&self) -> Result<String, bool> {
        let mut q = self.queue.lock().expect("outbox poisoned");
        if let Some(f) = q.reliable.pop_front() {
            return Ok(f);
        }
        q.tick.take().ok_or(q.closed)
    }

    /// Next frame to send, waiting if none is queued.
    pub async fn next(&self) -> Option<String> {
        loop {
            let notified = self.notify.notified();
            match self.pop() {
                Ok(frame) => return Some(frame),
                Err(true) => return None,
                Err(false) => notified.await,
            }
        }
    }
}
