//! Slice-level parallel execution, wallclock instrumentation and the
//! analytic cost model for parareal-type schemes.
//!
//! [`Executor::map`] is the single concurrency entry point of the crate. With
//! the `parallel` feature it runs tasks on a rayon pool of the requested
//! size; without it (or with one worker) tasks run in order on the calling
//! thread. Results are always assembled by task index, so outputs do not
//! depend on the worker count.

use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// A task that failed, reported once every task has settled.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFailure<E> {
    pub index: usize,
    pub error: E,
}

/// Bounded-parallelism map over independent tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executor {
    workers: usize,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

impl Executor {
    pub fn new(workers: usize) -> Self {
        Self { workers: workers.max(1) }
    }

    pub fn sequential() -> Self {
        Self { workers: 1 }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f(index, item)` for every item, at most `workers` at a time.
    ///
    /// On failure the lowest failing index is reported.
    pub fn map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, TaskFailure<E>>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
    {
        let settled = self.run(items, &f);
        let mut out = Vec::with_capacity(settled.len());
        for (index, r) in settled.into_iter().enumerate() {
            match r {
                Ok(v) => out.push(v),
                Err(error) => return Err(TaskFailure { index, error }),
            }
        }
        Ok(out)
    }

    #[cfg(feature = "parallel")]
    fn run<T, R, E, F>(&self, items: &[T], f: &F) -> Vec<Result<R, E>>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
    {
        use rayon::prelude::*;
        if self.workers == 1 || items.len() <= 1 {
            return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        pool(self.workers).install(|| {
            items
                .par_iter()
                .enumerate()
                .with_max_len(1)
                .map(|(i, t)| f(i, t))
                .collect()
        })
    }

    #[cfg(not(feature = "parallel"))]
    fn run<T, R, E, F>(&self, items: &[T], f: &F) -> Vec<Result<R, E>>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

#[cfg(feature = "parallel")]
fn pool(workers: usize) -> std::sync::Arc<rayon::ThreadPool> {
    use std::collections::HashMap;
    use std::sync::{Arc, OnceLock};

    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS.get_or_init(Default::default).lock().unwrap();
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(move |i| format!("slice-worker-{workers}-{i}"))
                    .build()
                    .expect("failed to build worker pool"),
            )
        })
        .clone()
}

/// Free-function form of [`Executor::map`].
pub fn parallel_map<T, R, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, TaskFailure<E>>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    Executor::new(workers).map(items, f)
}

/// Inputs of the analytic wallclock model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Wallclock of one fine slice run, seconds.
    pub t_fine: f64,
    /// Wallclock of one coarse slice run, seconds.
    pub t_coarse: f64,
    pub slices: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedTimes {
    pub t_serial: f64,
    pub t_para: f64,
    pub speedup: f64,
}

/// Worst-case parareal wallclock: one serial coarse sweep, then per
/// iteration one fine slice plus the remaining coarse sweep.
pub fn predict_times(model: &CostModel) -> PredictedTimes {
    let j = model.slices as f64;
    let k = model.iterations as f64;
    let t_serial = j * model.t_fine;
    let t_para = k * model.t_fine + (k + 1.0) * (j - k / 2.0) * model.t_coarse;
    PredictedTimes {
        t_serial,
        t_para,
        speedup: t_serial / t_para,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Coarse,
    Fine,
    EmulatorOptimize,
    EmulatorCondition,
    EmulatorPredict,
    Overhead,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
            Phase::EmulatorOptimize => "emulator_optimize",
            Phase::EmulatorCondition => "emulator_condition",
            Phase::EmulatorPredict => "emulator_predict",
            Phase::Overhead => "overhead",
        }
    }
}

/// Wallclock seconds per phase of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub coarse: f64,
    pub fine: f64,
    pub emulator_optimize: f64,
    pub emulator_condition: f64,
    pub emulator_predict: f64,
    pub overhead: f64,
    /// End-to-end wallclock, measured independently of the phases.
    pub total: f64,
}

impl PhaseTimings {
    pub fn phase_sum(&self) -> f64 {
        self.coarse
            + self.fine
            + self.emulator_optimize
            + self.emulator_condition
            + self.emulator_predict
            + self.overhead
    }

    fn slot(&mut self, phase: Phase) -> &mut f64 {
        match phase {
            Phase::Coarse => &mut self.coarse,
            Phase::Fine => &mut self.fine,
            Phase::EmulatorOptimize => &mut self.emulator_optimize,
            Phase::EmulatorCondition => &mut self.emulator_condition,
            Phase::EmulatorPredict => &mut self.emulator_predict,
            Phase::Overhead => &mut self.overhead,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub iteration: usize,
    pub slice: Option<usize>,
    pub phase: Phase,
    /// Seconds since the start of the run.
    pub start: f64,
    pub end: f64,
}

/// Collects per-task wallclock events; safe to share with worker threads.
#[derive(Debug)]
pub struct ScheduleLog {
    origin: Instant,
    events: Mutex<Vec<ScheduleEvent>>,
}

impl ScheduleLog {
    pub fn new(origin: Instant) -> Self {
        Self {
            origin,
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn record(&self, iteration: usize, slice: Option<usize>, phase: Phase, start: Instant, end: Instant) {
        let ev = ScheduleEvent {
            iteration,
            slice,
            phase,
            start: start.duration_since(self.origin).as_secs_f64(),
            end: end.duration_since(self.origin).as_secs_f64(),
        };
        self.events.lock().unwrap().push(ev);
    }

    /// Events ordered by start time.
    pub fn events(&self) -> Vec<ScheduleEvent> {
        let mut ev = self.events.lock().unwrap().clone();
        ev.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.slice.cmp(&b.slice)));
        ev
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "slice", "phase", "start", "end"])?;
        for ev in self.events() {
            wr.write_record([
                ev.iteration.to_string(),
                ev.slice.map(|s| s.to_string()).unwrap_or_default(),
                ev.phase.as_str().to_string(),
                ev.start.to_string(),
                ev.end.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Run instrumentation: phase accumulators, slice-run samples and the
/// schedule log.
#[derive(Debug)]
pub struct Instrument {
    start: Instant,
    timings: PhaseTimings,
    fine_samples: Vec<f64>,
    coarse_samples: Vec<f64>,
    log: ScheduleLog,
}

impl Default for Instrument {
    fn default() -> Self {
        Self::new()
    }
}

impl Instrument {
    pub fn new() -> Self {
        let start = Instant::now();
        Self {
            start,
            timings: PhaseTimings::default(),
            fine_samples: Vec::new(),
            coarse_samples: Vec::new(),
            log: ScheduleLog::new(start),
        }
    }

    pub fn log(&self) -> &ScheduleLog {
        &self.log
    }

    /// Times `f` as one block of `phase`.
    pub fn time<R>(&mut self, iteration: usize, phase: Phase, f: impl FnOnce() -> R) -> R {
        let t0 = Instant::now();
        let r = f();
        let t1 = Instant::now();
        *self.timings.slot(phase) += (t1 - t0).as_secs_f64();
        if phase != Phase::Overhead {
            self.log.record(iteration, None, phase, t0, t1);
        }
        r
    }

    pub fn add(&mut self, phase: Phase, seconds: f64) {
        *self.timings.slot(phase) += seconds;
    }

    pub fn coarse_slice(&mut self, iteration: usize, slice: usize, t0: Instant, t1: Instant) {
        let dt = (t1 - t0).as_secs_f64();
        self.timings.coarse += dt;
        self.coarse_samples.push(dt);
        self.log.record(iteration, Some(slice), Phase::Coarse, t0, t1);
    }

    pub fn fine_samples(&mut self, samples: impl IntoIterator<Item = f64>) {
        self.fine_samples.extend(samples);
    }

    /// Closes the run: the end-to-end wallclock and the per-phase breakdown.
    pub fn finish(self) -> Measured {
        let mut timings = self.timings;
        timings.total = self.start.elapsed().as_secs_f64();
        Measured {
            timings,
            median_fine: median(&self.fine_samples),
            median_coarse: median(&self.coarse_samples),
            log: self.log,
        }
    }
}

/// Output of [`Instrument::finish`].
#[derive(Debug)]
pub struct Measured {
    pub timings: PhaseTimings,
    pub median_fine: Option<f64>,
    pub median_coarse: Option<f64>,
    pub log: ScheduleLog,
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn map_preserves_order_for_any_worker_count() {
        let items: Vec<u64> = (0..97).collect();
        let work = |_: usize, x: &u64| -> Result<f64, ()> { Ok((*x as f64).sqrt().sin()) };
        let one = parallel_map(&items, 1, work).unwrap();
        for w in [2, 4, 40] {
            let many = parallel_map(&items, w, work).unwrap();
            assert_eq!(
                one.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                many.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn empty_task_list() {
        let items: Vec<u8> = Vec::new();
        let out = parallel_map(&items, 8, |_, x: &u8| Ok::<_, ()>(*x)).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn lowest_failing_index_reported() {
        let items: Vec<usize> = (0..20).collect();
        let err = parallel_map(&items, 4, |i, _| if i % 7 == 3 { Err(i) } else { Ok(i) }).unwrap_err();
        assert_eq!(err, TaskFailure { index: 3, error: 3 });
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn forty_sleeping_tasks_overlap() {
        let task = Duration::from_millis(100);
        let items = vec![(); 40];
        let exec = Executor::new(40);
        // warm the pool so thread start-up is not timed
        exec.map(&items, |_, _| Ok::<_, ()>(())).unwrap();
        let t0 = Instant::now();
        exec.map(&items, |_, _| {
            std::thread::sleep(task);
            Ok::<_, ()>(())
        })
        .unwrap();
        let elapsed = t0.elapsed();
        assert!(elapsed < task.mul_f64(1.2), "elapsed {elapsed:?}");
    }

    #[test]
    fn speedup_without_coarse_cost() {
        let p = predict_times(&CostModel { t_fine: 1.0, t_coarse: 0.0, slices: 40, iterations: 1 });
        assert_eq!(p.speedup, 40.0);
        for k in 1..=40 {
            let p = predict_times(&CostModel { t_fine: 2.5, t_coarse: 0.0, slices: 40, iterations: k });
            assert!((p.speedup - 40.0 / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn speedup_hand_example() {
        let p = predict_times(&CostModel { t_fine: 1.0, t_coarse: 0.001, slices: 40, iterations: 5 });
        assert!((p.t_para - 5.225).abs() < 1e-12);
        assert!((p.speedup - 40.0 / 5.225).abs() < 1e-12);
        assert!((p.speedup - 7.655).abs() < 1e-3);
    }

    #[test]
    fn speedup_decreases_with_iterations() {
        for &ratio in &[0.0001, 0.001, 0.01, 0.05] {
            for &j in &[8usize, 20, 40, 100] {
                let s: Vec<f64> = (1..j)
                    .map(|k| predict_times(&CostModel { t_fine: 1.0, t_coarse: ratio, slices: j, iterations: k }).speedup)
                    .collect();
                assert!(s.windows(2).all(|w| w[1] < w[0]), "J={j} ratio={ratio}");
            }
        }
    }

    #[test]
    fn median_of_samples() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn instrument_phase_sum_tracks_total() {
        let mut ins = Instrument::new();
        ins.time(0, Phase::Coarse, || std::thread::sleep(Duration::from_millis(20)));
        ins.time(1, Phase::Fine, || std::thread::sleep(Duration::from_millis(30)));
        ins.time(1, Phase::Overhead, || std::thread::sleep(Duration::from_millis(5)));
        let m = ins.finish();
        assert_eq!(m.timings.emulator_condition, 0.0);
        let rel = (m.timings.total - m.timings.phase_sum()).abs() / m.timings.total;
        assert!(rel < 0.05, "rel {rel}");
        assert_eq!(m.log.events().len(), 2);
    }
}
