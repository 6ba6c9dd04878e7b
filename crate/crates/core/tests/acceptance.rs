//! Acceptance suite. Each criterion prints one PASS/FAIL line to stderr,
//! bypassing the harness capture so the verdicts appear in every run.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use apgnet_core::checkpoint::build_trainer;
use apgnet_core::config::{parse_ladder, AblationId, ExperimentConfig};
use apgnet_core::dataset::Batch;
use apgnet_core::experiment::{ablate, evaluate, train, ABLATION_COLUMNS};
use apgnet_core::fixtures::{generate_fixture, write_fixture_set};
use apgnet_core::metrics::{e_measure, iou, mae, s_measure, score_pair, weighted_f_measure, MetricConfig};
use apgnet_core::model::{
    apg_forward, gate_term, ApgNet, Architecture, Cam, DeformRefine, GuideUnit, ModelConfig, PriorKind,
};
use apgnet_core::msrcr::{msrcr, MsrcrConfig};
use apgnet_core::raster::{GrayMap, RgbImage};
use apgnet_core::tensor::{
    conv2d, deform_conv2d, named_params, param_count, AdamConfig, ConvOptions, Mode, Tensor,
};
use apgnet_core::train::{batch_tensors, Scheme, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(id: u32, name: &str, check: impl FnOnce() -> Result<String, String>) {
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let line = match &outcome {
        Ok(detail) => format!("criterion {id:>2} {name}: PASS ({detail})"),
        Err(why) => format!("criterion {id:>2} {name}: FAIL ({why})"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(why) = outcome {
        panic!("criterion {id} failed: {why}");
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::constant(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

// Naive metric oracles, written from the definitions on plain slices.

const EPS: f64 = f64::EPSILON;

fn oracle_iou(p: &[f64], g: &[f64], thr: f64) -> f64 {
    let inter = p.iter().zip(g).filter(|(a, b)| **a >= thr && **b > 0.5).count();
    let union = p.iter().zip(g).filter(|(a, b)| **a >= thr || **b > 0.5).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn oracle_mae(p: &[f64], g: &[f64]) -> f64 {
    p.iter().zip(g).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64
}

fn oracle_e(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let thr = (2.0 * p.iter().sum::<f64>() / n).min(1.0);
    let fm: Vec<f64> = p.iter().map(|&v| if v >= thr { 1.0 } else { 0.0 }).collect();
    let gt: Vec<f64> = g.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    let gt_sum: f64 = gt.iter().sum();
    let enhanced: Vec<f64> = if gt_sum == 0.0 {
        fm.iter().map(|v| 1.0 - v).collect()
    } else if gt_sum == n {
        fm.clone()
    } else {
        let mu_fm = fm.iter().sum::<f64>() / n;
        let mu_gt = gt_sum / n;
        fm.iter()
            .zip(&gt)
            .map(|(&f, &t)| {
                let a = f - mu_fm;
                let b = t - mu_gt;
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0) * (align + 1.0) / 4.0
            })
            .collect()
    };
    enhanced.iter().sum::<f64>() / n
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn oracle_ssim(p: &[f64], g: &[f64]) -> f64 {
    let n = p.len() as f64;
    let x = p.iter().sum::<f64>() / n;
    let y = g.iter().sum::<f64>() / n;
    let sx = p.iter().map(|v| (v - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sy = g.iter().map(|v| (v - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
    let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + EPS);
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn oracle_s(p: &[f64], g: &[f64], h: usize, w: usize, alpha: f64) -> f64 {
    let gt: Vec<bool> = g.iter().map(|&v| v > 0.5).collect();
    let mean_gt = gt.iter().filter(|&&b| b).count() as f64 / gt.len() as f64;
    let mean_p = p.iter().sum::<f64>() / p.len() as f64;
    if mean_gt == 0.0 {
        return 1.0 - mean_p;
    }
    if mean_gt == 1.0 {
        return mean_p;
    }
    let object = |vals: Vec<f64>| {
        let (m, s) = mean_std(&vals);
        2.0 * m / (m * m + 1.0 + s + EPS)
    };
    let fg: Vec<f64> = p.iter().zip(&gt).filter(|(_, &t)| t).map(|(&v, _)| v).collect();
    let bg: Vec<f64> = p.iter().zip(&gt).filter(|(_, &t)| !t).map(|(&v, _)| 1.0 - v).collect();
    let s_object = mean_gt * object(fg) + (1.0 - mean_gt) * object(bg);

    let (mut cx, mut cy, mut count) = (0.0, 0.0, 0.0);
    for i in 0..h * w {
        if gt[i] {
            cx += (i % w + 1) as f64;
            cy += (i / w + 1) as f64;
            count += 1.0;
        }
    }
    let x = (cx / count).round() as usize;
    let y = (cy / count).round() as usize;
    let mut s_region = 0.0;
    for (r0, r1, c0, c1) in [(0, y, 0, x), (0, y, x, w), (y, h, 0, x), (y, h, x, w)] {
        let mut pp = Vec::new();
        let mut gg = Vec::new();
        for r in r0..r1 {
            for c in c0..c1 {
                pp.push(p[r * w + c]);
                gg.push(if gt[r * w + c] { 1.0 } else { 0.0 });
            }
        }
        if pp.is_empty() {
            continue;
        }
        s_region += pp.len() as f64 / (h * w) as f64 * oracle_ssim(&pp, &gg);
    }
    (alpha * s_object + (1.0 - alpha) * s_region).max(0.0)
}

fn oracle_fw(p: &[f64], g: &[f64], h: usize, w: usize, beta_sq: f64) -> f64 {
    let gt: Vec<bool> = g.iter().map(|&v| v > 0.5).collect();
    if !gt.iter().any(|&b| b) {
        return 0.0;
    }
    let e: Vec<f64> = p.iter().zip(&gt).map(|(&v, &t)| (v - if t { 1.0 } else { 0.0 }).abs()).collect();
    // brute-force nearest foreground, first hit in raster order wins ties
    let mut dist = vec![0.0; h * w];
    let mut et = e.clone();
    for i in 0..h * w {
        if gt[i] {
            continue;
        }
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let mut best = (i64::MAX, 0);
        for j in 0..h * w {
            if gt[j] {
                let (rr, cc) = ((j / w) as i64, (j % w) as i64);
                let d = (r - rr).pow(2) + (c - cc).pow(2);
                if d < best.0 {
                    best = (d, j);
                }
            }
        }
        dist[i] = (best.0 as f64).sqrt();
        et[i] = e[best.1];
    }
    let mut k = [[0.0; 7]; 7];
    let mut total = 0.0;
    for (dy, row) in k.iter_mut().enumerate() {
        for (dx, v) in row.iter_mut().enumerate() {
            let (a, b) = (dy as f64 - 3.0, dx as f64 - 3.0);
            *v = (-(a * a + b * b) / 50.0).exp();
            total += *v;
        }
    }
    let mut ea = vec![0.0; h * w];
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let mut acc = 0.0;
            for (dy, row) in k.iter().enumerate() {
                for (dx, v) in row.iter().enumerate() {
                    let (rr, cc) = (r + dy as i64 - 3, c + dx as i64 - 3);
                    if rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 {
                        acc += v / total * et[(rr * w as i64 + cc) as usize];
                    }
                }
            }
            ea[(r * w as i64 + c) as usize] = acc;
        }
    }
    let mut ew = vec![0.0; h * w];
    for i in 0..h * w {
        let min_e = if gt[i] && ea[i] < e[i] { ea[i] } else { e[i] };
        let b = if gt[i] { 1.0 } else { 2.0 - ((0.5f64).ln() / 5.0 * dist[i]).exp() };
        ew[i] = min_e * b;
    }
    let n_fg = gt.iter().filter(|&&t| t).count() as f64;
    let fg_err: f64 = (0..h * w).filter(|&i| gt[i]).map(|i| ew[i]).sum();
    let fp: f64 = (0..h * w).filter(|&i| !gt[i]).map(|i| ew[i]).sum();
    let tp = n_fg - fg_err;
    let r = 1.0 - fg_err / n_fg;
    let precision = tp / (EPS + tp + fp);
    (1.0 + beta_sq) * r * precision / (EPS + r + beta_sq * precision)
}

#[test]
fn criterion_01_metric_oracles() {
    verdict(1, "metric oracle suite", || {
        let start = Instant::now();
        let (h, w) = (16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = [0.0f64; 5];
        for case in 0..20 {
            let p = random_map(&mut rng, h * w);
            let g: Vec<f64> = match case {
                0 => vec![0.0; h * w],
                1 => vec![1.0; h * w],
                _ => {
                    let fg = rng.random_range(0.05..0.7);
                    (0..h * w).map(|_| f64::from(u8::from(rng.random_bool(fg)))).collect()
                }
            };
            let pm = GrayMap::new(h, w, p.clone()).unwrap();
            let gm = GrayMap::new(h, w, g.clone()).unwrap();
            let pairs = [
                (iou(&pm, &gm, 0.5).unwrap(), oracle_iou(&p, &g, 0.5), 1e-6),
                (mae(&pm, &gm).unwrap(), oracle_mae(&p, &g), 1e-6),
                (s_measure(&pm, &gm, 0.5).unwrap(), oracle_s(&p, &g, h, w, 0.5), 1e-6),
                (e_measure(&pm, &gm).unwrap(), oracle_e(&p, &g), 1e-6),
                (weighted_f_measure(&pm, &gm, 1.0).unwrap().value, oracle_fw(&p, &g, h, w, 1.0), 1e-5),
            ];
            for (k, (got, expect, tol)) in pairs.into_iter().enumerate() {
                let d = (got - expect).abs();
                worst[k] = worst[k].max(d);
                ensure(d <= tol, || format!("case {case} metric {k}: {got} vs oracle {expect}"))?;
            }
        }
        let secs = start.elapsed().as_secs_f64();
        ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
        Ok(format!(
            "max |diff| iou {:.1e} mae {:.1e} s {:.1e} e {:.1e} fw {:.1e}, {secs:.2}s",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ))
    });
}

#[test]
fn criterion_02_metric_identities() {
    verdict(2, "metric identity suite", || {
        let config = MetricConfig::default();
        for i in 0..10 {
            let (_, mask, _) = generate_fixture(0, i, 64);
            let s = score_pair(&mask, &mask, &config).unwrap();
            for (name, v, target) in [
                ("S", s.s_alpha, 1.0),
                ("E", s.e_phi, 1.0),
                ("Fw", s.f_beta_w, 1.0),
                ("IoU", s.iou, 1.0),
                ("MAE", s.mae, 0.0),
            ] {
                ensure((v - target).abs() <= 1e-6, || format!("fixture {i} {name} = {v}"))?;
            }
        }
        Ok("10 fixtures".into())
    });
}

fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn oracle_msrcr(img: &RgbImage, cfg: &MsrcrConfig) -> Vec<f64> {
    let (h, w) = img.shape();
    let eps = cfg.epsilon;
    let mut out = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let total: f64 = (0..3).map(|c| img.get(y, x, c)).sum();
            for c in 0..3 {
                let v = img.get(y, x, c);
                let mut r = 0.0;
                for (&sigma, &weight) in cfg.scales.iter().zip(&cfg.weights) {
                    let rad = (3.0 * sigma).ceil() as i64;
                    let (mut acc, mut norm) = (0.0, 0.0);
                    for dy in -rad..=rad {
                        for dx in -rad..=rad {
                            let k = (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
                            let yy = reflect(y as i64 + dy, h as i64);
                            let xx = reflect(x as i64 + dx, w as i64);
                            acc += k * img.get(yy, xx, c);
                            norm += k;
                        }
                    }
                    r += weight * ((v + eps).ln() - (acc / norm + eps).ln());
                }
                let restore = cfg.beta * ((cfg.alpha * v + eps).ln() - (total + eps).ln());
                out[(y * w + x) * 3 + c] = cfg.gain * r * restore + cfg.offset;
            }
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

fn positive_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    RgbImage::new(h, w, (0..h * w * 3).map(|_| rng.random_range(0.05..0.45)).collect()).unwrap()
}

#[test]
fn criterion_03_msrcr() {
    verdict(3, "msrcr invariance and oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MsrcrConfig {
            scales: vec![2.0, 6.0, 15.0],
            weights: vec![1.0 / 3.0; 3],
            ..MsrcrConfig::default()
        };
        let img = positive_image(&mut rng, 24, 20);
        let base = msrcr(&img, &cfg).unwrap();
        let mut worst_scale = 0.0f64;
        for c in [0.5, 2.0] {
            let scaled = msrcr(&img.scaled(c), &cfg).unwrap();
            for (a, b) in base.data().iter().zip(scaled.data()) {
                worst_scale = worst_scale.max((a - b).abs());
            }
        }
        ensure(worst_scale <= 1e-3, || format!("scale invariance off by {worst_scale}"))?;

        let gray = msrcr(&RgbImage::filled(9, 7, 0.4), &MsrcrConfig::default()).unwrap();
        ensure(gray.data().iter().all(|&v| v == 0.5), || "constant image is not 0.5".into())?;

        let small = MsrcrConfig {
            scales: vec![1.0, 2.0],
            weights: vec![0.5, 0.5],
            alpha: 125.0,
            beta: 46.0,
            gain: 1.0,
            offset: 0.0,
            ..MsrcrConfig::default()
        };
        let tiny = positive_image(&mut rng, 8, 8);
        let got = msrcr(&tiny, &small).unwrap();
        let expect = oracle_msrcr(&tiny, &small);
        let worst_oracle = got
            .data()
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(worst_oracle <= 1e-6, || format!("8x8 oracle off by {worst_oracle}"))?;
        Ok(format!("scale {worst_scale:.1e}, oracle {worst_oracle:.1e}"))
    });
}

#[test]
fn criterion_04_gating_identities() {
    verdict(4, "gating identities", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, [2, 6, 8, 10], -3.0, 3.0);
        let ones = Tensor::full([2, 6, 4, 5], 1.0);
        let zeros = Tensor::zeros([2, 6, 4, 5]);
        let doubled = gate_term(&x, &ones).unwrap();
        let same = gate_term(&x, &zeros).unwrap();
        for ((d, s), v) in doubled.data().iter().zip(same.data()).zip(x.data()) {
            ensure(*d == 2.0 * v, || format!("ones gate gave {d} for {v}"))?;
            ensure(*s == *v, || format!("zeros gate gave {s} for {v}"))?;
        }
        let xf = Tensor::<f32>::constant([1, 3, 6, 6], x.data()[..108].iter().map(|&v| v as f32).collect());
        let d = gate_term(&xf, &Tensor::full([1, 3, 3, 3], 1.0f32)).unwrap();
        ensure(d.data().iter().zip(xf.data()).all(|(a, b)| *a == 2.0 * b), || "f32 ones gate".into())?;
        Ok("exact in f64 and f32".into())
    });
}

fn bilinear_sample(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor() as i64, x.floor() as i64);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let mut acc = 0.0;
    for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                acc += wy * wx * plane[yy as usize * w + xx as usize];
            }
        }
    }
    acc
}

#[test]
fn criterion_05_guidance_identities() {
    verdict(5, "guidance identities and deformable oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_tensor(&mut rng, [2, 4, 6, 6], -1.0, 1.0);
        let prior = random_tensor(&mut rng, [2, 1, 24, 24], 0.0, 1.0);
        let deform = GuideUnit::Boundary(DeformRefine::new(&mut rng, 4));
        let cam = GuideUnit::Position(Cam::new(&mut rng, 4, 4));
        for (unit, kind) in [(&deform, PriorKind::Boundary), (&cam, PriorKind::Position)] {
            let out = apg_forward(unit, &f, &prior, kind, &Tensor::scalar(0.0), Mode::TRAIN).unwrap();
            ensure(out.data().iter().all(|&v| v == 0.0), || format!("{kind:?} not annihilated"))?;
        }

        let silent = DeformRefine::<f64>::new(&mut rng, 4);
        silent.conv.weight.fill(0.0);
        silent.conv.bias.as_ref().unwrap().fill(0.0);
        let out = apg_forward(&GuideUnit::Boundary(silent), &f, &prior, PriorKind::Boundary, &Tensor::scalar(1.0), Mode::TRAIN)
            .unwrap();
        ensure(out.to_vec() == f.to_vec(), || "f = 0, λ = 1 is not the identity".into())?;

        let opts = ConvOptions::same((3, 3), (1, 1));
        let x = random_tensor(&mut rng, [2, 3, 7, 6], -1.0, 1.0);
        let weight = random_tensor(&mut rng, [5, 3, 3, 3], -1.0, 1.0);
        let bias = random_tensor(&mut rng, [1, 5, 1, 1], -1.0, 1.0);
        let zero_off = Tensor::zeros([2, 18, 7, 6]);
        let a = deform_conv2d(&x, &zero_off, &weight, Some(&bias), opts);
        let b = conv2d(&x, &weight, Some(&bias), opts);
        let zero_gap = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        ensure(zero_gap <= 1e-6, || format!("zero-offset gap {zero_gap}"))?;

        let n = 5;
        let x = random_tensor(&mut rng, [1, 2, n, n], -1.0, 1.0);
        let weight = random_tensor(&mut rng, [2, 2, 3, 3], -1.0, 1.0);
        let off = random_tensor(&mut rng, [1, 18, n, n], -2.5, 2.5);
        let got = deform_conv2d(&x, &off, &weight, None, opts);
        let mut oracle_gap = 0.0f64;
        for o in 0..2 {
            for oy in 0..n {
                for ox in 0..n {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        let plane = &x.data()[ci * n * n..(ci + 1) * n * n];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let t = ky * 3 + kx;
                                let dy = off.data()[2 * t * n * n + oy * n + ox];
                                let dx = off.data()[(2 * t + 1) * n * n + oy * n + ox];
                                let sy = oy as f64 + ky as f64 - 1.0 + dy;
                                let sx = ox as f64 + kx as f64 - 1.0 + dx;
                                acc += weight.data()[((o * 2 + ci) * 3 + ky) * 3 + kx]
                                    * bilinear_sample(plane, n, n, sy, sx);
                            }
                        }
                    }
                    oracle_gap = oracle_gap.max((got.data()[(o * n + oy) * n + ox] - acc).abs());
                }
            }
        }
        ensure(oracle_gap <= 1e-5, || format!("nested-loop gap {oracle_gap}"))?;
        Ok(format!("zero-offset {zero_gap:.1e}, oracle {oracle_gap:.1e}"))
    });
}

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.ablation_id = AblationId::M5;
    c.data.size = 64;
    c.model.backbone.channels = [4, 8, 12, 16];
    c.model.erf.channels = 8;
    c.msrcr.scales = vec![4.0, 16.0];
    c.msrcr.weights = vec![0.5, 0.5];
    c
}

#[test]
fn criterion_06_siamese_contracts() {
    verdict(6, "siamese contracts", || {
        let config = small_config();
        let trainer = build_trainer(&config).unwrap();
        let samples: Vec<_> = (0..2)
            .map(|i| {
                let (im, m, _) = generate_fixture(0, i, 64);
                (im.clone(), im, m)
            })
            .collect();
        let batch = Batch::from_samples(&samples).unwrap();
        let (orig, enh, masks) = batch_tensors::<f32>(&batch);
        let graph = trainer.siamese_loss(&orig, &enh, &masks).unwrap();
        ensure(graph.report.l_align == 0.0, || format!("align {}", graph.report.l_align))?;
        let (a, b) = (&graph.predictions[0], &graph.predictions[1]);
        ensure(a.m1_logits.to_vec() == b.m1_logits.to_vec(), || "M1 differs".into())?;
        ensure(a.final_logits().to_vec() == b.final_logits().to_vec(), || "M2 differs".into())?;
        let single = ApgNet::<f32>::new(&config.model, Architecture::PriorGuided, config.seed).unwrap();
        let (pt, ps) = (trainer.param_count(), param_count(&single));
        ensure(pt == ps, || format!("trainer {pt} vs single branch {ps}"))?;
        Ok(format!("align 0, {pt} params"))
    });
}

#[test]
fn criterion_07_gradient_checks() {
    verdict(7, "gradient checks", || {
        let mut cfg = ModelConfig::default();
        cfg.backbone.channels = [4, 6, 8, 10];
        cfg.erf.channels = 4;
        let model = ApgNet::<f64>::new(&cfg, Architecture::PriorGuided, 7).unwrap();
        let trainer = Trainer::new(model, AdamConfig::default(), Scheme::Siamese, false, 7);
        let samples: Vec<_> = (0..2)
            .map(|i| {
                let (im, m, _) = generate_fixture(3, i, 32);
                let enh = msrcr(&im, &MsrcrConfig { scales: vec![2.0, 6.0], weights: vec![0.5, 0.5], ..Default::default() })
                    .unwrap();
                (im, enh, m)
            })
            .collect();
        let (orig, enh, masks) = batch_tensors::<f64>(&Batch::from_samples(&samples).unwrap());
        let loss = || trainer.siamese_loss(&orig, &enh, &masks).unwrap().total;
        let grads = loss().backward();

        let params = named_params(&trainer.model);
        let find = |pred: &dyn Fn(&str) -> bool| params.iter().find(|(n, _)| pred(n)).expect("parameter exists");
        let picks = [
            find(&|n| n == "apg.level1.lambda"),
            find(&|n| n == "apg.level3.lambda"),
            find(&|n| n.starts_with("erf2.") && n.ends_with("weight")),
            find(&|n| n == "refine.head.weight"),
            find(&|n| n == "decoder.head.weight"),
        ];
        let h = 1e-6;
        let mut worst = 0.0f64;
        let mut lines = Vec::new();
        for (name, p) in picks {
            let base = p.values().to_vec();
            let auto = grads.param(p).expect("gradient present")[0];
            let probe = |v: f64| {
                let mut vals = base.clone();
                vals[0] = v;
                p.set(vals);
                loss().item()
            };
            let fd = (probe(base[0] + h) - probe(base[0] - h)) / (2.0 * h);
            p.set(base.clone());
            let rel = (auto - fd).abs() / auto.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            lines.push(format!("{name} {auto:.3e}"));
            ensure(rel < 1e-3, || format!("{name}: autodiff {auto} vs fd {fd} (rel {rel:.2e})"))?;
        }
        Ok(format!("max rel err {worst:.1e} over {}", lines.join(", ")))
    });
}

#[test]
fn criterion_08_overfit_gate() {
    verdict(8, "desk overfit gate", || {
        let start = Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("fixtures");
        write_fixture_set(&root, 8, 0, 128).unwrap();
        let mut config = ExperimentConfig::default();
        config.ablation_id = AblationId::Full;
        config.seed = 0;
        config.data.root = Some(root.clone());
        config.data.size = 128;
        config.train.batch_size = 8;
        config.train.max_steps = Some(200);
        let outcome = train(&config, &tmp.path().join("run")).unwrap();
        ensure(outcome.steps == 200, || format!("ran {} steps", outcome.steps))?;
        let report = evaluate(&outcome.checkpoint, &root, &tmp.path().join("eval"), None).unwrap();
        let secs = start.elapsed().as_secs_f64();
        ensure(report.miou >= 0.85, || format!("training-set mIoU {:.4}", report.miou))?;
        ensure(secs < 900.0, || format!("took {secs:.0}s"))?;
        Ok(format!("mIoU {:.4} over {} images, {secs:.0}s", report.miou, report.n_images))
    });
}

#[test]
fn criterion_09_shape_contract() {
    verdict(9, "shape contract", || {
        let config = ExperimentConfig::default();
        let model = ApgNet::<f32>::new(&config.model, Architecture::PriorGuided, 0).unwrap();
        let images = Tensor::<f32>::zeros([1, 3, 352, 352]);
        let pyramid = model.extract_pyramid(&images, Mode::Eval).unwrap();
        let shapes = pyramid.shapes();
        for (level, stride) in [4, 8, 16, 32].into_iter().enumerate() {
            let [_, _, h, w] = shapes[level];
            ensure(h == 352 / stride && w == 352 / stride, || format!("level {level} is {h}x{w}"))?;
        }
        let out = model.forward(&images, Mode::Eval).unwrap();
        ensure(out.m1_logits.shape() == [1, 1, 352, 352], || format!("M1 {:?}", out.m1_logits.shape()))?;
        let m2 = out.m2_logits.as_ref().ok_or("no M2")?;
        ensure(m2.shape() == [1, 1, 352, 352], || format!("M2 {:?}", m2.shape()))?;
        let bad = Tensor::<f32>::zeros([1, 3, 350, 350]);
        ensure(model.forward(&bad, Mode::Eval).is_err(), || "350x350 accepted".into())?;
        ensure(model.extract_pyramid(&bad, Mode::Eval).is_err(), || "350x350 pyramid accepted".into())?;
        Ok("strides 4/8/16/32, M1 and M2 at 352x352, 350 rejected".into())
    });
}

#[test]
fn criterion_10_ablation_harness() {
    verdict(10, "ablation harness", || {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("fixtures");
        write_fixture_set(&root, 2, 0, 64).unwrap();
        let mut config = small_config();
        config.data.root = Some(root);
        config.train.batch_size = 2;
        config.train.epochs = 1;
        let ladder = parse_ladder("M1..M5").unwrap();
        let out = tmp.path().join("ablation");
        let rows = ablate(&config, &ladder, &out).unwrap();
        let ids: Vec<String> = rows.iter().map(|r| r.id.to_string()).collect();
        ensure(ids == ["M1", "M2", "M3", "M4", "M5"], || format!("rows {ids:?}"))?;
        let mut reader = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
        let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
        ensure(header == ABLATION_COLUMNS, || format!("csv header {header:?}"))?;
        let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
        ensure(records.len() == 5, || format!("{} csv rows", records.len()))?;
        ensure(records.iter().all(|r| r.len() == ABLATION_COLUMNS.len()), || "ragged csv".into())?;
        ensure(Path::new(&out.join("ablation.md")).is_file(), || "no markdown table".into())?;
        for r in &rows {
            let m = &r.report;
            let finite = [m.miou, m.s_alpha, m.f_beta_w, m.e_phi, m.mae].iter().all(|v| v.is_finite());
            ensure(finite && m.n_images == 2, || format!("{} report incomplete", r.id))?;
        }
        let p: Vec<usize> = rows.iter().map(|r| r.params).collect();
        ensure(p[1] > p[0], || format!("M2 {} <= M1 {}", p[1], p[0]))?;
        ensure(p[2] > p[1], || format!("M3 {} <= M2 {}", p[2], p[1]))?;
        ensure(p[4] == p[2], || format!("M5 {} != M3 {}", p[4], p[2]))?;
        Ok(format!("params M1 {} M2 {} M3 {} M4 {} M5 {}", p[0], p[1], p[2], p[3], p[4]))
    });
}
