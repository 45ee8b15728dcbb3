//! Shared Metropolis bookkeeping: adaptive random-walk step sizes and named
//! parameter traces.

/// Step size and acceptance counts of one random-walk coordinate.
///
/// During burn-in the log step is nudged after every batch toward the target
/// acceptance rate with a gain that decays like 1/√batch; afterwards it is
/// frozen and only post-burn-in acceptances are counted.
#[derive(Clone, Debug)]
pub struct RwTuner {
    pub step: f64,
    batch_tries: u32,
    batch_accepts: u32,
    batches: u32,
    tries: u64,
    accepts: u64,
}

impl RwTuner {
    pub fn new(step: f64) -> Self {
        RwTuner { step, batch_tries: 0, batch_accepts: 0, batches: 0, tries: 0, accepts: 0 }
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.batch_tries += 1;
            self.batch_accepts += accepted as u32;
        } else {
            self.tries += 1;
            self.accepts += accepted as u64;
        }
    }

    /// Close a batch and adjust the step toward `target`.
    pub fn adapt(&mut self, target: f64) {
        if self.batch_tries == 0 {
            return;
        }
        self.batches += 1;
        let rate = self.batch_accepts as f64 / self.batch_tries as f64;
        let gain = (3.0 / (self.batches as f64).sqrt()).min(1.5);
        self.step *= (gain * (rate - target)).exp();
        self.step = self.step.clamp(1e-8, 1e4);
        self.batch_tries = 0;
        self.batch_accepts = 0;
    }

    /// Post-burn-in acceptance rate; `None` before any post-burn-in attempt.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.tries > 0).then(|| self.accepts as f64 / self.tries as f64)
    }
}

/// Integer-valued proposal width adapted the same way.
#[derive(Clone, Debug)]
pub struct IntTuner {
    pub width: u32,
    inner: RwTuner,
}

impl IntTuner {
    pub fn new(width: u32) -> Self {
        IntTuner { width: width.max(1), inner: RwTuner::new(width.max(1) as f64) }
    }

    pub fn record(&mut self, accepted: bool, adapting: bool) {
        self.inner.record(accepted, adapting);
    }

    pub fn adapt(&mut self, target: f64) {
        self.inner.adapt(target);
        self.width = (self.inner.step.round() as u32).clamp(1, 10_000);
        self.inner.step = self.inner.step.max(0.5);
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        self.inner.acceptance_rate()
    }
}

/// Draws of a set of named scalar parameters, one row per retained iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub names: Vec<String>,
    pub iterations: Vec<u64>,
    pub rows: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(names: Vec<String>) -> Self {
        Trace { names, iterations: Vec::new(), rows: Vec::new() }
    }

    pub fn push(&mut self, iteration: u64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.iterations.push(iteration);
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// All draws of one parameter.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.index_of(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Names `prefix[0]`, `prefix[1]`, …
pub fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}[{k}]")).collect()
}
