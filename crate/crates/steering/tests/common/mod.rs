#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use clio_core::gateway::{FnModel, Gateway, HashEmbedder, ModelRequest, ModelResponse, Purpose};
use clio_core::{ChannelParams, LoopConfig, RunConfig};
use clio_steering::{CreateRun, GatewayFactory, Service, ServiceOptions};

pub const Q: &str = "Which antibody crosses the placenta?";

/// Blocks every model call while held and counts calls that reached it.
#[derive(Default)]
pub struct Gate {
    held: Mutex<bool>,
    cv: Condvar,
    trap: Mutex<Option<String>>,
    pub entered: AtomicUsize,
    blocked: AtomicUsize,
}

impl Gate {
    pub fn hold(&self) {
        *self.held.lock().unwrap() = true;
    }

    pub fn release(&self) {
        *self.held.lock().unwrap() = false;
        self.cv.notify_all();
    }

    /// Closes the gate on the first call made on `channel`.
    pub fn trap(&self, channel: &str) {
        *self.trap.lock().unwrap() = Some(channel.to_string());
    }

    fn pass(&self, channel: &str) {
        self.entered.fetch_add(1, Ordering::SeqCst);
        let mut held = self.held.lock().unwrap();
        {
            let mut trap = self.trap.lock().unwrap();
            if trap.as_deref() == Some(channel) {
                *trap = None;
                *held = true;
            }
        }
        self.blocked.fetch_add(1, Ordering::SeqCst);
        while *held {
            held = self.cv.wait(held).unwrap();
        }
        self.blocked.fetch_sub(1, Ordering::SeqCst);
    }

    /// Waits until some call is parked at the closed gate.
    pub fn wait_blocked(&self) {
        for _ in 0..4000 {
            if *self.held.lock().unwrap() && self.blocked.load(Ordering::SeqCst) > 0 {
                return;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        panic!("no call blocked");
    }

    pub fn wait_entered(&self, n: usize) {
        for _ in 0..4000 {
            if self.entered.load(Ordering::SeqCst) >= n {
                return;
            }
            std::thread::sleep(Duration::from_millis(1));
        }
        panic!("model never called");
    }
}

/// Low-confidence model answering IgG, gated by `gate`.
pub fn gated_backend(gate: Arc<Gate>) -> GatewayFactory {
    Arc::new(move || {
        let gate = gate.clone();
        let chat = FnModel(move |r: &ModelRequest| {
            gate.pass(&r.tag.channel_id);
            Ok(match r.tag.purpose {
                Purpose::Coverage => ModelResponse::text("- [ ] a\n- [ ] b"),
                Purpose::Confidence => ModelResponse::text("confidence: 0.3\nuncertainty: 0.4 | which isotype"),
                Purpose::SelfOptimize => ModelResponse::text("no change"),
                _ => ModelResponse::text("answer: IgG"),
            })
        });
        Ok(Arc::new(Gateway::new(Arc::new(chat), Arc::new(HashEmbedder::new(16)))))
    })
}

pub fn open(dir: &std::path::Path, gate: Arc<Gate>) -> Arc<Service> {
    Service::open(ServiceOptions {
        data_dir: dir.to_path_buf(),
        gateways: gated_backend(gate),
        wall_clock: false,
    })
    .unwrap()
}

pub fn request(b: u32, d: u32) -> CreateRun {
    let params = ChannelParams {
        branching_factor_b: b,
        max_depth_D: d,
        confidence_threshold_tau: 0.99,
        ..Default::default()
    };
    CreateRun {
        question: Q.into(),
        mode: clio_core::RunMode::Single,
        config: RunConfig {
            loop_cfg: LoopConfig {
                params,
                max_parallel_channels: 1,
                ..Default::default()
            },
            ..Default::default()
        },
    }
}

/// Every persisted run folds back to exactly its stored index record.
pub fn assert_rebuild_matches(svc: &Service) {
    // Read the index back from disk rather than trusting the in-memory copy.
    let store = clio_steering::RunStore::open(svc.store().dir()).unwrap();
    let ids = store.run_ids().unwrap();
    assert!(!ids.is_empty());
    for id in ids {
        let events = store.load_events(&id).unwrap();
        let rebuilt = clio_steering::RunRecord::fold(&events).unwrap();
        assert_eq!(Some(rebuilt), store.stored_record(&id), "{id}");
    }
}
