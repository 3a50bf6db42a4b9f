use super::calendar::{calendar_features, Calendar};
use super::series::FlowSeries;
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub h_in: usize,
    pub h_out: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            h_in: 12,
            h_out: 12,
            stride: 1,
        }
    }
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.h_in + self.h_out
    }
}

/// Ordered window start offsets over one series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Windows {
    pub spec: WindowSpec,
    pub starts: Vec<usize>,
}

impl Windows {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }
}

pub fn make_windows(series: &FlowSeries, spec: WindowSpec) -> Result<Windows> {
    window_starts(series.timesteps(), spec)
}

pub(crate) fn window_starts(t_len: usize, spec: WindowSpec) -> Result<Windows> {
    if spec.h_in == 0 || spec.h_out == 0 || spec.stride == 0 {
        return Err(Error::contract("window lengths and stride must be ≥ 1"));
    }
    if t_len < spec.span() {
        return Err(Error::contract(format!(
            "series of {t_len} steps is shorter than one {}+{} window",
            spec.h_in, spec.h_out
        )));
    }
    let starts = (0..=t_len - spec.span()).step_by(spec.stride).collect();
    Ok(Windows { spec, starts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.1,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Val,
    Test,
    /// Windows outside any split, e.g. for prediction export.
    Unsplit,
}

/// Window positions (indices into [`Windows::starts`]) per split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
            SplitTag::Unsplit => &[],
        }
    }
}

/// Tail-anchored chronological split.
///
/// Test takes the last `⌈test·W⌉` windows, validation the `⌈val·W⌉` before
/// it, training the first `⌈train·W⌉` (never reaching into validation). An
/// earlier split then loses every window whose input+target span reaches the
/// first time step of the next split.
pub fn chronological_split(windows: &Windows, ratios: SplitRatios) -> Result<Splits> {
    let SplitRatios { train, val, test } = ratios;
    for (name, r) in [("train", train), ("val", val), ("test", test)] {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::contract(format!("{name} ratio {r} outside (0, 1]")));
        }
    }
    if train + val + test > 1.0 + 1e-9 {
        return Err(Error::contract(format!(
            "split ratios sum to {} > 1",
            train + val + test
        )));
    }
    let w = windows.len();
    let take = |r: f64| ((r * w as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_test = take(test).min(w);
    let test_start = w - n_test;
    let n_val = take(val).min(test_start);
    let val_start = test_start - n_val;
    let n_train = take(train).min(val_start);

    let span = windows.spec.span();
    let starts = &windows.starts;
    let keep_before = |range: std::ops::Range<usize>, next_first: Option<usize>| -> Vec<usize> {
        range
            .filter(|&i| match next_first {
                Some(boundary) => starts[i] + span <= starts[boundary],
                None => true,
            })
            .collect()
    };

    let test_idx: Vec<usize> = (test_start..w).collect();
    let val_idx = keep_before(val_start..test_start, test_idx.first().copied());
    let next_after_train = if n_val > 0 {
        Some(val_start)
    } else {
        test_idx.first().copied()
    };
    let train_idx = keep_before(0..n_train, next_after_train);

    for (name, split) in [
        ("train", &train_idx),
        ("validation", &val_idx),
        ("test", &test_idx),
    ] {
        if split.is_empty() {
            return Err(Error::Split(format!(
                "{name} split is empty after removing boundary-straddling windows ({w} windows total)"
            )));
        }
    }
    Ok(Splits {
        train: train_idx,
        val: val_idx,
        test: test_idx,
    })
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const MIN_STD: f32 = 1e-6;

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, channel: usize, x: f32) -> f32 {
        (x - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, z: f32) -> f32 {
        z * self.std[channel] + self.mean[channel]
    }
}

/// Statistics over the distinct time steps covered by training-window inputs.
pub fn fit_normalizer(
    series: &FlowSeries,
    windows: &Windows,
    train: &[usize],
) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::contract(
            "normalizer needs at least one training window",
        ));
    }
    let mut covered = vec![false; series.timesteps()];
    for &w in train {
        let s = windows.starts[w];
        covered[s..s + windows.spec.h_in]
            .iter_mut()
            .for_each(|c| *c = true);
    }
    let c = series.channel_count();
    let mut mean = vec![0.0f32; c];
    let mut std = vec![0.0f32; c];
    for ch in 0..c {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for r in 0..series.regions() {
            for (t, _) in covered.iter().enumerate().filter(|(_, c)| **c) {
                sum += f64::from(series.at(r, t, ch));
                count += 1;
            }
        }
        let m = sum / count as f64;
        let mut var = 0.0f64;
        for r in 0..series.regions() {
            for (t, _) in covered.iter().enumerate().filter(|(_, c)| **c) {
                let d = f64::from(series.at(r, t, ch)) - m;
                var += d * d;
            }
        }
        mean[ch] = m as f32;
        std[ch] = ((var / count as f64).sqrt() as f32).max(MIN_STD);
    }
    Ok(NormStats { mean, std })
}

/// A batch of windows ready for the model.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// Normalized history, `[B, N, H_in, C]`.
    pub inputs: Tensor<f32>,
    /// Original-unit targets, `[B, N, H_out, C]`.
    pub targets: Tensor<f32>,
    /// `[B × H_in]`, row-major.
    pub tod_idx: Vec<usize>,
    pub dow_idx: Vec<usize>,
    pub window_start: Vec<usize>,
    /// Positions in the full window list.
    pub window_index: Vec<usize>,
    pub split: SplitTag,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.window_start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window_start.is_empty()
    }
}

/// A series with its calendar, windows and normalization, from which
/// batches are cut.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: FlowSeries,
    pub calendar: Calendar,
    pub windows: Windows,
    pub norm: NormStats,
}

impl Dataset {
    pub fn new(series: FlowSeries, windows: Windows, norm: NormStats) -> Self {
        let calendar = calendar_features(&series);
        Dataset {
            series,
            calendar,
            windows,
            norm,
        }
    }

    pub fn spec(&self) -> WindowSpec {
        self.windows.spec
    }

    /// Cut the windows at `positions`; inputs are normalized unless `raw`.
    pub fn batch_with(
        &self,
        positions: &[usize],
        split: SplitTag,
        raw: bool,
    ) -> Result<WindowBatch> {
        let spec = self.windows.spec;
        let (n, c) = (self.series.regions(), self.series.channel_count());
        let b = positions.len();
        let mut inputs = Vec::with_capacity(b * n * spec.h_in * c);
        let mut targets = Vec::with_capacity(b * n * spec.h_out * c);
        let mut tod_idx = Vec::with_capacity(b * spec.h_in);
        let mut dow_idx = Vec::with_capacity(b * spec.h_in);
        let mut window_start = Vec::with_capacity(b);
        for &p in positions {
            let start = *self.windows.starts.get(p).ok_or(Error::Bounds {
                what: "window list",
                index: p,
                len: self.windows.len(),
            })?;
            window_start.push(start);
            for r in 0..n {
                for t in start..start + spec.h_in {
                    for ch in 0..c {
                        let v = self.series.at(r, t, ch);
                        inputs.push(if raw { v } else { self.norm.apply(ch, v) });
                    }
                }
                for t in start + spec.h_in..start + spec.span() {
                    for ch in 0..c {
                        targets.push(self.series.at(r, t, ch));
                    }
                }
            }
            tod_idx.extend_from_slice(&self.calendar.tod[start..start + spec.h_in]);
            dow_idx.extend_from_slice(&self.calendar.dow[start..start + spec.h_in]);
        }
        Ok(WindowBatch {
            inputs: Tensor::new(vec![b, n, spec.h_in, c], inputs)?,
            targets: Tensor::new(vec![b, n, spec.h_out, c], targets)?,
            tod_idx,
            dow_idx,
            window_start,
            window_index: positions.to_vec(),
            split,
        })
    }

    pub fn batch(&self, positions: &[usize], split: SplitTag) -> Result<WindowBatch> {
        self.batch_with(positions, split, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::series::parse_time;
    use proptest::prelude::*;

    fn windows(t: usize, h_in: usize, h_out: usize) -> Windows {
        window_starts(
            t,
            WindowSpec {
                h_in,
                h_out,
                stride: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        // enumeration: starts 0..=30-24
        assert_eq!(windows(30, 12, 12).len(), 7);
        assert_eq!(windows(24, 12, 12).len(), 1);
        assert!(window_starts(23, WindowSpec::default()).is_err());
        let strided = window_starts(
            30,
            WindowSpec {
                h_in: 12,
                h_out: 12,
                stride: 4,
            },
        )
        .unwrap();
        assert_eq!(strided.starts, vec![0, 4]);
    }

    #[test]
    fn test_split_is_the_tail() {
        let w = windows(103, 2, 2); // 100 windows
        let s = chronological_split(
            &w,
            SplitRatios {
                train: 0.5,
                val: 0.1,
                test: 0.1,
            },
        )
        .unwrap();
        assert_eq!(s.test, (90..100).collect::<Vec<_>>());
        // val windows 80..=89 keep only those ending before step 90
        assert_eq!(s.val, (80..=86).collect::<Vec<_>>());
        assert_eq!(s.train, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn boundary_windows_drop_from_train() {
        // 100 windows of span 24: every validation window (80..=89) reaches
        // past step 90 where test begins, so validation empties
        let w = windows(123, 12, 12);
        let s = chronological_split(
            &w,
            SplitRatios {
                train: 0.1,
                val: 0.1,
                test: 0.1,
            },
        );
        assert!(matches!(s, Err(Error::Split(_))));

        let w = windows(103, 2, 2);
        let s = chronological_split(
            &w,
            SplitRatios {
                train: 0.1,
                val: 0.1,
                test: 0.1,
            },
        )
        .unwrap();
        assert_eq!(s.train.len(), 10);

        // train butting against validation loses span-1 windows
        let s = chronological_split(
            &w,
            SplitRatios {
                train: 0.8,
                val: 0.1,
                test: 0.1,
            },
        )
        .unwrap();
        assert_eq!(s.train, (0..=76).collect::<Vec<_>>());
    }

    #[test]
    fn ratio_validation() {
        let w = windows(103, 2, 2);
        assert!(chronological_split(
            &w,
            SplitRatios {
                train: 0.6,
                val: 0.3,
                test: 0.3
            }
        )
        .is_err());
        assert!(chronological_split(
            &w,
            SplitRatios {
                train: 0.0,
                val: 0.3,
                test: 0.3
            }
        )
        .is_err());
    }

    fn toy_series(
        n: usize,
        t: usize,
        c: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> FlowSeries {
        let mut data = Vec::new();
        for r in 0..n {
            for s in 0..t {
                for ch in 0..c {
                    data.push(f(r, s, ch));
                }
            }
        }
        FlowSeries::new(
            Tensor::new(vec![n, t, c], data).unwrap(),
            parse_time("2021-01-01T00:00:00Z").unwrap(),
            30,
            (0..c).map(|i| format!("ch{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalizer_degenerate_and_identity() {
        let s = toy_series(2, 30, 1, |_, _, _| 5.0);
        let w = windows(30, 4, 4);
        let norm = fit_normalizer(&s, &w, &[0, 1, 2]).unwrap();
        assert_eq!(norm.std[0], MIN_STD);
        assert!(norm.apply(0, 5.0).abs() < 1e-6);

        let alt = toy_series(1, 30, 1, |_, t, _| if t % 2 == 0 { 1.0 } else { 0.0 });
        let n2 = fit_normalizer(&alt, &w, &[0]).unwrap();
        assert!((n2.mean[0] - 0.5).abs() < 1e-6);
        assert!((n2.std[0] - 0.5).abs() < 1e-6);

        let ident = NormStats::identity(1);
        assert_eq!(ident.apply(0, 3.25), 3.25);
    }

    #[test]
    fn normalizer_uses_only_training_inputs() {
        let s = toy_series(1, 20, 1, |_, t, _| if t < 5 { 1.0 } else { 100.0 });
        let w = windows(20, 5, 3);
        let norm = fit_normalizer(&s, &w, &[0]).unwrap();
        assert_eq!(norm.mean[0], 1.0);
    }

    #[test]
    fn batches_reassemble_the_series() {
        let s = toy_series(3, 40, 2, |r, t, c| (r * 1000 + t * 10 + c) as f32);
        let w = window_starts(
            40,
            WindowSpec {
                h_in: 5,
                h_out: 3,
                stride: 4,
            },
        )
        .unwrap();
        let ds = Dataset::new(s.clone(), w.clone(), NormStats::identity(2));
        let all: Vec<usize> = (0..w.len()).collect();
        let b = ds.batch_with(&all, SplitTag::Train, true).unwrap();
        let (n, c) = (3, 2);
        for (bi, &start) in b.window_start.iter().enumerate() {
            for r in 0..n {
                for k in 0..5 {
                    for ch in 0..c {
                        let v = b.inputs.data()[((bi * n + r) * 5 + k) * c + ch];
                        assert_eq!(v.to_bits(), s.at(r, start + k, ch).to_bits());
                    }
                }
                for k in 0..3 {
                    for ch in 0..c {
                        let v = b.targets.data()[((bi * n + r) * 3 + k) * c + ch];
                        assert_eq!(v.to_bits(), s.at(r, start + 5 + k, ch).to_bits());
                    }
                }
            }
        }
        assert_eq!(b.tod_idx.len(), w.len() * 5);
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_ordered(
            w_count in 30usize..400,
            h_in in 1usize..6,
            h_out in 1usize..6,
            train in 0.05f64..0.6,
            val in 0.05f64..0.2,
            test in 0.05f64..0.2,
        ) {
            let w = windows(w_count + h_in + h_out - 1, h_in, h_out);
            if let Ok(s) = chronological_split(&w, SplitRatios { train, val, test }) {
                prop_assert!(s.train.iter().max() < s.val.iter().min());
                prop_assert!(s.val.iter().min() < s.test.iter().min());
                let span = h_in + h_out;
                prop_assert!(w.starts[*s.train.last().unwrap()] + span <= w.starts[s.val[0]]);
                prop_assert!(w.starts[*s.val.last().unwrap()] + span <= w.starts[s.test[0]]);
                prop_assert_eq!(s.test.len(), ((test * w.len() as f64) - 1e-9).ceil() as usize);
            }
        }

        #[test]
        fn normalize_round_trip(x in 0.0f32..10_000.0, mean in 0.0f32..500.0, std in 0.01f32..200.0) {
            let norm = NormStats { mean: vec![mean], std: vec![std] };
            let back = norm.invert(0, norm.apply(0, x));
            prop_assert!((back - x).abs() <= 1e-5 * x.abs().max(1.0) * 10.0);
        }
    }
}
