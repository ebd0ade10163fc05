//! Shared fixtures: synthetic datasets and direct-definition oracles.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use groundcast::domain::{DataProfile, Dataset, Splits, TimeSeries};

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

pub fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2018, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

pub fn make_dataset(
    name: &str,
    step_secs: i64,
    endo: (&str, Vec<f64>),
    exo: Vec<(&str, Vec<f64>)>,
    sizes: (usize, usize, usize),
) -> Dataset {
    let n = endo.1.len();
    let t0 = start_time();
    let ts: Arc<Vec<NaiveDateTime>> =
        Arc::new((0..n).map(|i| t0 + Duration::seconds(step_secs * i as i64)).collect());
    let mut descriptions = std::collections::BTreeMap::new();
    descriptions.insert(endo.0.to_string(), format!("{} target", endo.0));
    let endogenous = TimeSeries::new(endo.0, "target", ts.clone(), endo.1).unwrap();
    let exogenous = exo
        .into_iter()
        .map(|(c, v)| {
            descriptions.insert(c.to_string(), format!("{c} covariate"));
            TimeSeries::new(c, "covariate", ts.clone(), v).unwrap()
        })
        .collect();
    let frequency = groundcast::domain::Frequency::from_seconds(step_secs).unwrap();
    let profile = DataProfile {
        dataset_name: name.into(),
        domain_description: format!("synthetic {name} data"),
        variable_descriptions: descriptions,
        frequency_text: frequency.to_string(),
    };
    Dataset::new(
        endogenous,
        exogenous,
        profile,
        frequency,
        Splits::from_sizes(sizes.0, sizes.1, sizes.2, n).unwrap(),
    )
    .unwrap()
}

/// Hourly price-like series with daily and weekly cycles driven by load.
pub fn np_like(seed: u64) -> Dataset {
    let n = 14_832;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut load = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);
    let mut price = Vec::with_capacity(n);
    let mut ar = 0.0;
    for t in 0..n {
        let hour = (t % 24) as f64;
        let day = ((t / 24) % 7) as f64;
        let l = 40.0
            + 8.0 * (2.0 * PI * (hour - 7.0) / 24.0).sin()
            + 3.0 * (2.0 * PI * day / 7.0).cos()
            + noise.sample(&mut rng);
        let w = 10.0 + 4.0 * (2.0 * PI * t as f64 / 300.0).sin() + 0.5 * noise.sample(&mut rng);
        ar = 0.8 * ar + noise.sample(&mut rng);
        price.push(30.0 + 0.6 * l - 0.8 * w + ar);
        load.push(l);
        wind.push(w);
    }
    make_dataset(
        "NP",
        3600,
        ("price", price),
        vec![("load", load), ("wind", wind)],
        (10_224, 1_584, 3_024),
    )
}

/// Hourly transformer-like data: six load covariates and an oil temperature.
pub fn etth1_like(seed: u64) -> Dataset {
    let n = 8_544 + 1_344 + 2_544;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let names = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL"];
    let mut exo: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 6];
    let mut ot = Vec::with_capacity(n);
    let mut drift = 0.0;
    for t in 0..n {
        let hour = (t % 24) as f64;
        let mut acc = 0.0;
        for (j, col) in exo.iter_mut().enumerate() {
            let v = (j as f64 + 1.0)
                * (1.0 + 0.5 * (2.0 * PI * (hour + j as f64) / 24.0).sin())
                + 0.3 * noise.sample(&mut rng);
            acc += v;
            col.push(v);
        }
        drift += 0.02 * noise.sample(&mut rng);
        ot.push(15.0 + drift + 0.2 * acc + 2.0 * (2.0 * PI * t as f64 / (24.0 * 30.0)).sin());
    }
    let exo = names.iter().copied().zip(exo).collect();
    make_dataset("ETTh1", 3600, ("OT", ot), exo, (8_544, 1_344, 2_544))
}

/// Exactly `m`-periodic hourly data.
pub fn periodic(m: usize, n: usize, sizes: (usize, usize, usize), seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
    let values = (0..n).map(|t| pattern[t % m]).collect();
    make_dataset("periodic", 3600, ("y", values), vec![], sizes)
}

pub fn random_walk(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x += noise.sample(&mut rng);
            x
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracles. Each follows the textbook definition with plain loops.

pub fn o_mean(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

pub fn o_central_moment(x: &[f64], p: i32) -> f64 {
    let m = o_mean(x);
    let mut s = 0.0;
    for v in x {
        s += (v - m).powi(p);
    }
    s / x.len() as f64
}

pub fn o_constant(x: &[f64]) -> bool {
    let first = x[0];
    x.iter().all(|&v| v == first)
}

pub fn o_acf(x: &[f64], k: usize) -> f64 {
    let n = x.len();
    let m = o_mean(x);
    let mut num = 0.0;
    for t in 0..n - k {
        num += (x[t] - m) * (x[t + k] - m);
    }
    let mut den = 0.0;
    for t in 0..n {
        den += (x[t] - m) * (x[t] - m);
    }
    num / den
}

pub fn o_acf10(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 1..=10 {
        let r = o_acf(x, k);
        s += r * r;
    }
    s
}

pub fn o_diff(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() - 1);
    for t in 1..x.len() {
        out.push(x[t] - x[t - 1]);
    }
    out
}

/// Periodogram entropy by direct DFT.
pub fn o_spectral_entropy(x: &[f64]) -> f64 {
    let n = x.len();
    let m = o_mean(x);
    let bins = n / 2;
    let mut power = Vec::with_capacity(bins);
    for k in 1..=bins {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in x.iter().enumerate() {
            let angle = 2.0 * PI * (k * t % n) as f64 / n as f64;
            re += (v - m) * angle.cos();
            im -= (v - m) * angle.sin();
        }
        power.push(re * re + im * im);
    }
    let total: f64 = power.iter().sum();
    let mut h = 0.0;
    for p in power {
        let q = p / total;
        if q > 0.0 {
            h -= q * q.ln();
        }
    }
    h / (bins as f64).ln()
}

pub fn o_sample_entropy(x: &[f64]) -> f64 {
    let n = x.len();
    let r = 0.2 * o_central_moment(x, 2).sqrt();
    let mut b = 0.0f64;
    let mut a = 0.0f64;
    for i in 0..n - 2 {
        for j in 0..n - 2 {
            if i == j {
                continue;
            }
            let d2 = (x[i] - x[j]).abs().max((x[i + 1] - x[j + 1]).abs());
            if d2 <= r {
                b += 1.0;
                if (x[i + 2] - x[j + 2]).abs() <= r {
                    a += 1.0;
                }
            }
        }
    }
    if a == 0.0 || b == 0.0 {
        10.0
    } else {
        (-(a / b).ln()).min(10.0)
    }
}

pub fn o_lumpiness(x: &[f64], width: usize) -> f64 {
    let tiles = x.len() / width;
    let mut vars = Vec::new();
    for i in 0..tiles {
        vars.push(o_central_moment(&x[i * width..(i + 1) * width], 2));
    }
    o_central_moment(&vars, 2)
}

pub fn o_flat_spots(x: &[f64]) -> f64 {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bins: Vec<usize> = x
        .iter()
        .map(|v| {
            let b = ((v - lo) / (hi - lo) * 10.0).floor() as usize;
            if b > 9 {
                9
            } else {
                b
            }
        })
        .collect();
    let mut best = 0;
    let mut i = 0;
    while i < bins.len() {
        let mut j = i;
        while j < bins.len() && bins[j] == bins[i] {
            j += 1;
        }
        best = best.max(j - i);
        i = j;
    }
    best as f64
}

pub fn o_median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 0 {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    } else {
        s[n / 2]
    }
}

pub fn o_crossings(x: &[f64]) -> f64 {
    let med = o_median(x);
    let mut c = 0;
    for t in 1..x.len() {
        let below_prev = x[t - 1] <= med;
        let below = x[t] <= med;
        if below_prev != below {
            c += 1;
        }
    }
    c as f64
}

/// Classical additive decomposition with an explicit weight vector.
pub fn o_seasonal_strength(x: &[f64], m: usize) -> f64 {
    let n = x.len();
    let weights: Vec<f64> = if m % 2 == 0 {
        let mut w = vec![1.0 / m as f64; m + 1];
        w[0] = 0.5 / m as f64;
        w[m] = 0.5 / m as f64;
        w
    } else {
        vec![1.0 / m as f64; m]
    };
    let half = weights.len() / 2;
    let mut detrended = vec![None; n];
    for t in half..n - half {
        let mut trend = 0.0;
        for (j, w) in weights.iter().enumerate() {
            trend += w * x[t + j - half];
        }
        detrended[t] = Some(x[t] - trend);
    }
    let mut seasonal = vec![0.0; m];
    for (pos, s) in seasonal.iter_mut().enumerate() {
        let vals: Vec<f64> = (0..n)
            .filter(|t| t % m == pos)
            .filter_map(|t| detrended[t])
            .collect();
        *s = o_mean(&vals);
    }
    let smean = o_mean(&seasonal);
    let d: Vec<f64> = detrended.iter().flatten().copied().collect();
    let r: Vec<f64> = (0..n)
        .filter_map(|t| detrended[t].map(|v| v - (seasonal[t % m] - smean)))
        .collect();
    let ratio = o_central_moment(&r, 2) / o_central_moment(&d, 2);
    (1.0 - ratio).max(0.0)
}

/// All twenty features in canonical order, for non-degenerate windows of
/// length >= 2·max(period, 10) and >= 14.
pub fn oracle_features(x: &[f64], period: usize) -> [f64; 20] {
    let var = o_central_moment(x, 2);
    let d1 = o_diff(x);
    let d2 = o_diff(&d1);
    [
        x.len() as f64,
        o_mean(x),
        var.sqrt(),
        var,
        x.iter().cloned().fold(f64::INFINITY, f64::min),
        x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        o_central_moment(x, 3) / var.powf(1.5),
        o_central_moment(x, 4) / (var * var) - 3.0,
        o_spectral_entropy(x),
        o_acf(x, 1),
        o_acf10(x),
        o_acf(&d1, 1),
        o_acf10(&d1),
        o_acf(&d2, 1),
        o_acf10(&d2),
        o_sample_entropy(x),
        o_lumpiness(x, period.max(10)),
        o_flat_spots(x),
        o_crossings(x),
        o_seasonal_strength(x, period),
    ]
}

/// AR(1) sample `x_t = phi x_{t-1} + e_t` after a burn-in.
pub fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut x = 0.0;
    for _ in 0..500 {
        x = phi * x + noise.sample(&mut rng);
    }
    (0..n)
        .map(|_| {
            x = phi * x + noise.sample(&mut rng);
            x
        })
        .collect()
}
