//! Point-to-point patterns layered on the broker: exclusive pairs and
//! router/dealer fan-in with reply routing.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;
use thiserror::Error;

use super::{Bus, CorrelationId, Event, EventKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Pair,
    RouterDealer,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("endpoint `{0}` already belongs to a pair")]
    EndpointBusy(String),
    #[error("`{0}` is not a registered component")]
    UnknownEndpoint(String),
    #[error("`{0}` is not an endpoint of this channel")]
    NotAnEndpoint(String),
    #[error("a pair needs two distinct endpoints")]
    SameEndpoint,
    #[error("no message within {0:?}")]
    Timeout(Duration),
    #[error("channel closed")]
    Closed,
    #[error("bad topic: {0}")]
    BadTopic(String),
}

pub enum Channel {
    Pair(PairChannel),
    RouterDealer(RouterDealerChannel),
}

impl Channel {
    pub fn into_pair(self) -> Option<PairChannel> {
        match self {
            Channel::Pair(p) => Some(p),
            _ => None,
        }
    }

    pub fn into_router_dealer(self) -> Option<RouterDealerChannel> {
        match self {
            Channel::RouterDealer(r) => Some(r),
            _ => None,
        }
    }
}

pub(super) fn open(bus: &Bus, kind: ChannelKind, a: &str, b: &str) -> Result<Channel, ChannelError> {
    {
        let known = bus.inner.endpoints.lock();
        for id in [a, b] {
            if !known.contains(id) {
                return Err(ChannelError::UnknownEndpoint(id.to_string()));
            }
        }
    }
    if a == b {
        return Err(ChannelError::SameEndpoint);
    }
    match kind {
        ChannelKind::Pair => {
            let mut paired = bus.inner.paired.lock();
            for id in [a, b] {
                if paired.contains(id) {
                    return Err(ChannelError::EndpointBusy(id.to_string()));
                }
            }
            paired.insert(a.to_string());
            paired.insert(b.to_string());
            let (ab_tx, ab_rx) = unbounded();
            let (ba_tx, ba_rx) = unbounded();
            Ok(Channel::Pair(PairChannel {
                bus: bus.clone(),
                a: a.to_string(),
                b: b.to_string(),
                ab: (ab_tx, ab_rx),
                ba: (ba_tx, ba_rx),
            }))
        }
        ChannelKind::RouterDealer => {
            let rd = RouterDealerChannel {
                bus: bus.clone(),
                router: a.to_string(),
                inbox: unbounded(),
                dealers: Mutex::new(HashMap::new()),
            };
            rd.add_dealer(b)?;
            Ok(Channel::RouterDealer(rd))
        }
    }
}

/// Exclusive bidirectional FIFO link between two endpoints. Dropping the
/// channel frees both endpoints for new pairs.
pub struct PairChannel {
    bus: Bus,
    a: String,
    b: String,
    ab: (Sender<Arc<Event>>, Receiver<Arc<Event>>),
    ba: (Sender<Arc<Event>>, Receiver<Arc<Event>>),
}

impl PairChannel {
    pub fn endpoints(&self) -> (&str, &str) {
        (&self.a, &self.b)
    }

    pub fn send(&self, from: &str, event: Event) -> Result<(), ChannelError> {
        let tx = if from == self.a {
            &self.ab.0
        } else if from == self.b {
            &self.ba.0
        } else {
            return Err(ChannelError::NotAnEndpoint(from.to_string()));
        };
        let event = Arc::new(event);
        self.bus.observe(&event);
        tx.send(event).map_err(|_| ChannelError::Closed)
    }

    pub fn recv(&self, at: &str, timeout: Duration) -> Result<Arc<Event>, ChannelError> {
        let rx = if at == self.b {
            &self.ab.1
        } else if at == self.a {
            &self.ba.1
        } else {
            return Err(ChannelError::NotAnEndpoint(at.to_string()));
        };
        rx.recv_timeout(timeout).map_err(|_| ChannelError::Timeout(timeout))
    }
}

impl Drop for PairChannel {
    fn drop(&mut self) {
        let mut paired = self.bus.inner.paired.lock();
        paired.remove(&self.a);
        paired.remove(&self.b);
    }
}

/// A message as seen by the router: which dealer sent it, and the event.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub dealer_id: String,
    pub event: Arc<Event>,
}

type DealerQueue = (Sender<Arc<Event>>, Receiver<Arc<Event>>);

/// One router, many dealers. Replies travel back only to the dealer that
/// sent the matching request.
pub struct RouterDealerChannel {
    bus: Bus,
    router: String,
    inbox: (Sender<Envelope>, Receiver<Envelope>),
    dealers: Mutex<HashMap<String, DealerQueue>>,
}

impl RouterDealerChannel {
    pub fn router_id(&self) -> &str {
        &self.router
    }

    pub fn add_dealer(&self, dealer_id: &str) -> Result<(), ChannelError> {
        if !self.bus.inner.endpoints.lock().contains(dealer_id) {
            return Err(ChannelError::UnknownEndpoint(dealer_id.to_string()));
        }
        if dealer_id == self.router {
            return Err(ChannelError::SameEndpoint);
        }
        self.dealers
            .lock()
            .entry(dealer_id.to_string())
            .or_insert_with(unbounded);
        Ok(())
    }

    /// Sends a request from `dealer_id`; returns its correlation id.
    pub fn dealer_send(
        &self,
        dealer_id: &str,
        topic: &str,
        payload: crate::value::Value,
    ) -> Result<CorrelationId, ChannelError> {
        if !self.dealers.lock().contains_key(dealer_id) {
            return Err(ChannelError::NotAnEndpoint(dealer_id.to_string()));
        }
        let id = CorrelationId(self.bus.fresh_id());
        let event = Event::correlated(topic, dealer_id, EventKind::Request, id)
            .map_err(|e| ChannelError::BadTopic(e.to_string()))?
            .with_payload(payload);
        let event = Arc::new(event);
        self.bus.observe(&event);
        self.inbox
            .0
            .send(Envelope {
                dealer_id: dealer_id.to_string(),
                event,
            })
            .map_err(|_| ChannelError::Closed)?;
        Ok(id)
    }

    pub fn router_recv(&self, timeout: Duration) -> Result<Envelope, ChannelError> {
        self.inbox.1.recv_timeout(timeout).map_err(|_| ChannelError::Timeout(timeout))
    }

    pub fn router_reply(&self, to: &Envelope, topic: &str, payload: crate::value::Value) -> Result<(), ChannelError> {
        let event = Event::reply_to(&to.event, topic, self.router.as_str())
            .map_err(|e| ChannelError::BadTopic(e.to_string()))?
            .with_payload(payload);
        let event = Arc::new(event);
        self.bus.observe(&event);
        let dealers = self.dealers.lock();
        let (tx, _) = dealers
            .get(&to.dealer_id)
            .ok_or_else(|| ChannelError::NotAnEndpoint(to.dealer_id.clone()))?;
        tx.send(event).map_err(|_| ChannelError::Closed)
    }

    pub fn dealer_recv(&self, dealer_id: &str, timeout: Duration) -> Result<Arc<Event>, ChannelError> {
        let rx = self
            .dealers
            .lock()
            .get(dealer_id)
            .map(|(_, rx)| rx.clone())
            .ok_or_else(|| ChannelError::NotAnEndpoint(dealer_id.to_string()))?;
        rx.recv_timeout(timeout).map_err(|_| ChannelError::Timeout(timeout))
    }
}
