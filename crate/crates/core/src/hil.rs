//! Host interface layer: a bounded FCFS device queue plus the latency map
//! table completions are published through.
//!
//! The queue bounds requests in flight; a full queue rejects the submit and
//! the caller retries at a later tick. Completions stay in the map until
//! drained so an asynchronous host can poll at its own pace.

use std::collections::{HashMap, VecDeque};

use crate::config::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReqOp {
    Read,
    Write,
}

impl ReqOp {
    pub fn label(self) -> &'static str {
        match self {
            ReqOp::Read => "R",
            ReqOp::Write => "W",
        }
    }
}

/// One host-issued block request. `lba` counts 512-byte sectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostRequest {
    pub id: u64,
    pub op: ReqOp,
    pub lba: u64,
    pub n_sector: u64,
    pub arrival_tick: Tick,
}

/// Where a completed request spent its time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatencyBreakdown {
    /// Arrival to first flash phase start.
    pub queue_ns: Tick,
    /// Garbage-collection work charged to this request.
    pub firmware_ns: Tick,
    /// First to last flash phase of the request's own pages.
    pub flash_ns: Tick,
}

/// Entry of the latency map table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletionRecord {
    pub request_id: u64,
    pub finish_tick: Tick,
    pub device_latency: Tick,
    pub breakdown: LatencyBreakdown,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("request {id}: lba {lba}+{n_sector} beyond {capacity} exported sectors")]
    OutOfRange {
        id: u64,
        lba: u64,
        n_sector: u64,
        capacity: u64,
    },
    #[error("device queue full (depth {depth})")]
    QueueFull { depth: u64 },
    #[error("request must have at least one sector")]
    EmptySpan,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown request id {0}")]
pub struct UnknownRequest(pub u64);

/// Poll result for a submitted request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Poll {
    Pending,
    Ready(CompletionRecord),
}

pub struct Hil {
    queue_depth: u64,
    capacity_sectors: u64,
    /// Accepted, not yet dispatched to the FTL.
    queue: VecDeque<HostRequest>,
    /// Dispatched, not yet completed.
    outstanding: u64,
    /// Latency map table: request id -> completion.
    completions: HashMap<u64, CompletionRecord>,
    accepted: u64,
    next_expected_id: u64,
}

impl Hil {
    pub fn new(queue_depth: u64, capacity_sectors: u64) -> Hil {
        Hil {
            queue_depth,
            capacity_sectors,
            queue: VecDeque::new(),
            outstanding: 0,
            completions: HashMap::new(),
            accepted: 0,
            next_expected_id: 0,
        }
    }

    pub fn capacity_sectors(&self) -> u64 {
        self.capacity_sectors
    }

    /// Requests admitted and not yet completed.
    pub fn in_flight(&self) -> u64 {
        self.queue.len() as u64 + self.outstanding
    }

    pub fn has_room(&self) -> bool {
        self.in_flight() < self.queue_depth
    }

    /// Admit a request into the device queue.
    pub fn submit(&mut self, req: HostRequest) -> Result<(), SubmitError> {
        if req.n_sector == 0 {
            return Err(SubmitError::EmptySpan);
        }
        if req.lba + req.n_sector > self.capacity_sectors {
            return Err(SubmitError::OutOfRange {
                id: req.id,
                lba: req.lba,
                n_sector: req.n_sector,
                capacity: self.capacity_sectors,
            });
        }
        if !self.has_room() {
            return Err(SubmitError::QueueFull {
                depth: self.queue_depth,
            });
        }
        self.queue.push_back(req);
        self.accepted += 1;
        self.next_expected_id = self.next_expected_id.max(req.id + 1);
        Ok(())
    }

    /// Hand the queue head to the firmware, exactly once per request and in
    /// admission order.
    pub fn dispatch(&mut self) -> Option<HostRequest> {
        let req = self.queue.pop_front()?;
        self.outstanding += 1;
        Some(req)
    }

    /// Publish a completion into the latency map table.
    pub fn complete(&mut self, record: CompletionRecord) {
        debug_assert!(self.outstanding > 0);
        self.outstanding -= 1;
        let prev = self.completions.insert(record.request_id, record);
        debug_assert!(prev.is_none(), "duplicate completion");
    }

    /// Idempotent lookup; records persist until drained.
    pub fn poll_completion(&self, request_id: u64) -> Result<Poll, UnknownRequest> {
        if let Some(rec) = self.completions.get(&request_id) {
            return Ok(Poll::Ready(*rec));
        }
        if request_id < self.next_expected_id {
            Ok(Poll::Pending)
        } else {
            Err(UnknownRequest(request_id))
        }
    }

    /// Remove and return all published completions.
    pub fn drain_completions(&mut self) -> Vec<CompletionRecord> {
        let mut all: Vec<CompletionRecord> = self.completions.drain().map(|(_, r)| r).collect();
        all.sort_by_key(|r| r.request_id);
        all
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn completed(&self) -> u64 {
        self.completions.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(id: u64, lba: u64, n: u64) -> HostRequest {
        HostRequest {
            id,
            op: ReqOp::Read,
            lba,
            n_sector: n,
            arrival_tick: 0,
        }
    }

    fn completion(id: u64, finish: Tick) -> CompletionRecord {
        CompletionRecord {
            request_id: id,
            finish_tick: finish,
            device_latency: finish,
            breakdown: LatencyBreakdown::default(),
        }
    }

    #[test]
    fn empty_queue_accepts() {
        let mut hil = Hil::new(32, 1 << 20);
        assert!(hil.submit(read(0, 0, 16)).is_ok());
    }

    #[test]
    fn lba_at_capacity_is_out_of_range() {
        let mut hil = Hil::new(32, 1024);
        let err = hil.submit(read(0, 1024, 1)).unwrap_err();
        assert!(matches!(err, SubmitError::OutOfRange { .. }));
        // Touching the last sector exactly is fine.
        assert!(hil.submit(read(1, 1023, 1)).is_ok());
    }

    #[test]
    fn depth_one_rejects_the_second_submit() {
        let mut hil = Hil::new(1, 1 << 20);
        assert!(hil.submit(read(0, 0, 16)).is_ok());
        let err = hil.submit(read(1, 16, 16)).unwrap_err();
        assert_eq!(err, SubmitError::QueueFull { depth: 1 });
        // Dispatching does not free the slot; completion does.
        let req = hil.dispatch().unwrap();
        assert!(hil.submit(read(1, 16, 16)).is_err());
        hil.complete(completion(req.id, 10));
        assert!(hil.submit(read(1, 16, 16)).is_ok());
    }

    #[test]
    fn dispatch_preserves_fcfs_order() {
        let mut hil = Hil::new(8, 1 << 20);
        for id in 0..5 {
            hil.submit(read(id, id * 16, 16)).unwrap();
        }
        let order: Vec<u64> = std::iter::from_fn(|| hil.dispatch().map(|r| r.id)).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn poll_is_idempotent_and_pending_until_complete() {
        let mut hil = Hil::new(8, 1 << 20);
        hil.submit(read(3, 0, 16)).unwrap();
        hil.dispatch().unwrap();
        assert_eq!(hil.poll_completion(3), Ok(Poll::Pending));
        hil.complete(completion(3, 99));
        let a = hil.poll_completion(3).unwrap();
        let b = hil.poll_completion(3).unwrap();
        assert_eq!(a, b);
        match a {
            Poll::Ready(rec) => assert_eq!(rec.finish_tick, 99),
            Poll::Pending => panic!("expected ready"),
        }
    }

    #[test]
    fn unknown_request_is_an_error() {
        let hil = Hil::new(8, 1 << 20);
        assert_eq!(hil.poll_completion(42), Err(UnknownRequest(42)));
    }

    #[test]
    fn conservation_every_accepted_request_completes_once() {
        let mut hil = Hil::new(4, 1 << 20);
        let mut completed = Vec::new();
        let mut next_id = 0u64;
        for _ in 0..100 {
            while hil.has_room() {
                hil.submit(read(next_id, 0, 16)).unwrap();
                next_id += 1;
            }
            while let Some(req) = hil.dispatch() {
                hil.complete(completion(req.id, req.id));
            }
            completed.extend(hil.drain_completions().into_iter().map(|r| r.request_id));
        }
        let expect: Vec<u64> = (0..next_id).collect();
        assert_eq!(completed, expect);
    }
}
