//! Executors that run subscriber mailboxes off the posting thread.

use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Sender};
use parking_lot::Mutex;

pub(crate) type Job = Box<dyn FnOnce() + Send + 'static>;

enum Msg {
    Run(Job),
    Stop,
}

/// One dedicated thread draining a FIFO job queue.
pub(crate) struct WorkerThread {
    tx: Sender<Msg>,
    handle: Mutex<Option<JoinHandle<()>>>,
}

impl WorkerThread {
    pub(crate) fn spawn(name: &str) -> Self {
        let (tx, rx) = unbounded::<Msg>();
        let handle = std::thread::Builder::new()
            .name(name.to_string())
            .spawn(move || {
                while let Ok(Msg::Run(job)) = rx.recv() {
                    job();
                }
            })
            .expect("spawn bus worker thread");
        WorkerThread {
            tx,
            handle: Mutex::new(Some(handle)),
        }
    }

    fn submit(&self, job: Job) {
        // Send only fails after stop; late jobs are dropped with the queue.
        let _ = self.tx.send(Msg::Run(job));
    }

    fn stop(&self) {
        let _ = self.tx.send(Msg::Stop);
        if let Some(h) = self.handle.lock().take() {
            if h.thread().id() != std::thread::current().id() {
                let _ = h.join();
            }
        }
    }
}

pub(crate) enum Executor {
    Thread(WorkerThread),
    #[cfg(feature = "parallel")]
    Pool(rayon::ThreadPool),
}

impl Executor {
    /// The BACKGROUND executor: a rayon pool when the `parallel` feature is
    /// on, otherwise a single worker thread.
    #[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
    pub(crate) fn background(threads: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.max(1))
                .thread_name(|i| format!("bus-pool-{i}"))
                .build()
                .expect("build bus worker pool");
            Executor::Pool(pool)
        }
        #[cfg(not(feature = "parallel"))]
        {
            Executor::Thread(WorkerThread::spawn("bus-background"))
        }
    }

    pub(crate) fn dispatcher() -> Self {
        Executor::Thread(WorkerThread::spawn("bus-dispatcher"))
    }

    pub(crate) fn submit(&self, job: Job) {
        match self {
            Executor::Thread(w) => w.submit(job),
            #[cfg(feature = "parallel")]
            Executor::Pool(p) => p.spawn(job),
        }
    }

    pub(crate) fn stop(&self) {
        match self {
            Executor::Thread(w) => w.stop(),
            #[cfg(feature = "parallel")]
            Executor::Pool(_) => {}
        }
    }
}
