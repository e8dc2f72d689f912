//! Fan-out of fused messages to live subscribers.
//!
//! The producer never waits. Each subscriber reads from a bounded window of
//! the most recent messages; one that falls behind skips forward to the
//! oldest message still retained and the skipped count is recorded.

use std::sync::Arc;

use tokio::sync::broadcast::{self, error::RecvError, error::TryRecvError};

pub const SUBSCRIBER_QUEUE_DEPTH: usize = 256;

pub type Message = Arc<str>;

#[derive(Debug, Clone)]
pub struct Broadcaster {
    tx: broadcast::Sender<Message>,
}

impl Default for Broadcaster {
    fn default() -> Self {
        Self::new(SUBSCRIBER_QUEUE_DEPTH)
    }
}

impl Broadcaster {
    pub fn new(depth: usize) -> Self {
        let (tx, _) = broadcast::channel(depth);
        Self { tx }
    }

    /// Returns the number of subscribers the message was queued for.
    pub fn publish(&self, message: impl Into<Message>) -> usize {
        self.tx.send(message.into()).unwrap_or(0)
    }

    pub fn subscribe(&self) -> Subscription {
        Subscription {
            rx: self.tx.subscribe(),
            skipped: 0,
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.tx.receiver_count()
    }
}

#[derive(Debug)]
pub struct Subscription {
    rx: broadcast::Receiver<Message>,
    /// Messages dropped because this subscriber fell behind.
    pub skipped: u64,
}

impl Subscription {
    /// Next message in publish order; `None` once the broadcaster is gone.
    pub async fn recv(&mut self) -> Option<Message> {
        loop {
            match self.rx.recv().await {
                Ok(m) => return Some(m),
                Err(RecvError::Lagged(n)) => self.skipped += n,
                Err(RecvError::Closed) => return None,
            }
        }
    }

    pub fn try_recv(&mut self) -> Option<Message> {
        loop {
            match self.rx.try_recv() {
                Ok(m) => return Some(m),
                Err(TryRecvError::Lagged(n)) => self.skipped += n,
                Err(TryRecvError::Empty | TryRecvError::Closed) => return None,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn fast_subscriber_sees_everything_in_order() {
        let hub = Broadcaster::default();
        let mut sub = hub.subscribe();
        let consumer = tokio::spawn(async move {
            let mut got = Vec::new();
            while let Some(m) = sub.recv().await {
                got.push(m.parse::<u32>().unwrap());
            }
            (got, sub.skipped)
        });
        for i in 0..10_000u32 {
            hub.publish(i.to_string());
            if i % 100 == 0 {
                tokio::task::yield_now().await;
            }
        }
        drop(hub);
        let (got, skipped) = consumer.await.unwrap();
        // the consumer may lag at times; whatever arrives is strictly ordered
        assert!(got.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(got.len() as u64 + skipped, 10_000);
    }

    #[test]
    fn stalled_subscriber_drops_oldest_without_affecting_others() {
        let hub = Broadcaster::new(8);
        let mut fast = hub.subscribe();
        let mut stalled = hub.subscribe();
        let mut fast_got = Vec::new();
        for i in 0..100u32 {
            assert_eq!(hub.publish(i.to_string()), 2);
            while let Some(m) = fast.try_recv() {
                fast_got.push(m.to_string());
            }
        }
        assert_eq!(fast_got.len(), 100);
        assert_eq!(fast.skipped, 0);
        let mut rest = Vec::new();
        while let Some(m) = stalled.try_recv() {
            rest.push(m.parse::<u32>().unwrap());
        }
        assert_eq!(rest, (92..100).collect::<Vec<_>>());
        assert_eq!(stalled.skipped, 92);
    }

    #[test]
    fn disconnect_unsubscribes() {
        let hub = Broadcaster::default();
        let sub = hub.subscribe();
        assert_eq!(hub.subscriber_count(), 1);
        drop(sub);
        assert_eq!(hub.subscriber_count(), 0);
        assert_eq!(hub.publish("x"), 0);
    }
}
