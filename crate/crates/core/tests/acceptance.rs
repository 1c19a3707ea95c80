//! Acceptance suite. Runs every headline criterion, prints one line per
//! criterion and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use lipinc::harness::*;
use lipinc::ingest::*;
use lipinc::landmarks::{LandmarkFrame, ToyProvider};
use lipinc::localize::{iou, localize, LocalizeConfig, ModelScorer, OracleScorer};
use lipinc::losses::{avg_similarity, inconsistency_loss, ssim, total_loss, total_loss_graph, LossConfig};
use lipinc::mstie::*;
use lipinc::selector::*;
use ndarray::{Array2, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rand_frames(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Array4<u8> {
    Array4::from_shape_fn((n, h, w, 3), |_| rng.random())
}

fn tensors(rgb: &Array4<u8>) -> (Array4<f64>, Array4<f64>) {
    let delta = DeltaSequence::from_rgb(rgb);
    (rgb.mapv(|v| v as f64 / 255.0), delta.tensor())
}

fn toy_landmarks(video: &FrameStream) -> Vec<Option<LandmarkFrame>> {
    detect_all(video, &mut ToyProvider::new())
}

fn shape_suite() -> Outcome {
    let start = Instant::now();
    let video = ToySpec::default().render(0).map_err(|e| e.to_string())?;
    let sel = select_and_build(&video.stream, &toy_landmarks(&video.stream), &SelectorConfig::default())
        .map_err(|e| e.to_string())?;
    let (rgb, delta) = (sel.rgb.tensor(), sel.delta.tensor());
    check(rgb.dim() == (8, 64, 144, 3), format!("R {:?}", rgb.dim()))?;
    check(delta.dim() == (7, 64, 144, 3), format!("D {:?}", delta.dim()))?;
    let cfg = ModelConfig::default();
    check(cfg.tokens_per_frame() == 36, format!("X = {}", cfg.tokens_per_frame()))?;
    let model = Model::new(cfg).map_err(|e| e.to_string())?;
    let mut ctx = Ctx::eval(model.params());
    let t = forward(&mut ctx, &cfg, rgb.view(), delta.view()).map_err(|e| e.to_string())?;
    let g = &ctx.graph;
    check(g.shape(t.rgb_tokens) == (8 * 36, 128), format!("tokens {:?}", g.shape(t.rgb_tokens)))?;
    check(g.shape(t.fused) == (7, 128), format!("fused {:?}", g.shape(t.fused)))?;
    check(g.shape(t.logit) == (1, 1), format!("logit {:?}", g.shape(t.logit)))?;
    let r = model.predict(rgb.view(), delta.view()).map_err(|e| e.to_string())?;
    let grid = r.feature_grid.ok_or("no feature grid")?;
    check(grid.dim() == (8, 4, 9, 128), format!("FeatureGrid {:?}", grid.dim()))?;
    check((0.0..=1.0).contains(&r.probability_real), "probability outside [0, 1]")?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok(format!("all shapes exact, {:.2} s", elapsed.as_secs_f64()))
}

fn delta_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..100 {
        let n = rng.random_range(2..10);
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let rgb = rand_frames(&mut rng, n, h, w);
        let d = DeltaSequence::from_rgb(&rgb);
        check(d.len() == n - 1, format!("case {case}: {} deltas for {n} frames", d.len()))?;
        for t in 0..n - 1 {
            for ((&a, &dd), &b) in rgb
                .index_axis(Axis(0), t)
                .iter()
                .zip(d.frames.index_axis(Axis(0), t))
                .zip(rgb.index_axis(Axis(0), t + 1))
            {
                check(a as i16 + dd == b as i16, format!("case {case} frame {t}: {a} + {dd} != {b}"))?;
            }
        }
    }
    Ok("100 sequences exact".into())
}

fn attention_rows() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut sites = BTreeSet::new();
    for cfg in [ModelConfig::default(), ModelConfig::toy()] {
        let model = Model::new(cfg).map_err(|e| e.to_string())?;
        let rgb = rand_frames(&mut rng, 8, cfg.crop_height, cfg.crop_width);
        let (rgb, delta) = tensors(&rgb);
        let mut ctx = Ctx::eval(model.params()).record_attention();
        forward(&mut ctx, &cfg, rgb.view(), delta.view()).map_err(|e| e.to_string())?;
        for r in ctx.attention_log() {
            sites.insert(r.site.clone());
            for row in r.weights.rows() {
                worst = worst.max((row.sum() - 1.0).abs());
            }
        }
    }
    check(sites.len() >= 11, format!("only {} sites recorded", sites.len()))?;
    check(worst < 1e-5, format!("row sum off by {worst:e}"))?;
    Ok(format!("{} sites, max |row sum - 1| = {worst:.1e}", sites.len()))
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

/// Attention with explicit loops: projections, per-head softmax, output
/// projection.
fn brute_attention(p: &ParamStore, prefix: &str, q_in: &Array2<f64>, kv_in: &Array2<f64>, heads: usize) -> Array2<f64> {
    let lin = |x: &Array2<f64>, name: &str| {
        let w = p.get(&format!("{prefix}.{name}.w")).unwrap();
        let b = p.get(&format!("{prefix}.{name}.b")).unwrap();
        Array2::from_shape_fn((x.nrows(), w.ncols()), |(i, j)| {
            b[[0, j]] + (0..x.ncols()).map(|k| x[[i, k]] * w[[k, j]]).sum::<f64>()
        })
    };
    let (q, k, v) = (lin(q_in, "q"), lin(kv_in, "k"), lin(kv_in, "v"));
    let e = q.ncols();
    let d = e / heads;
    let mut cat = Array2::zeros((q.nrows(), e));
    for h in 0..heads {
        for i in 0..q.nrows() {
            let scores: Vec<f64> = (0..k.nrows())
                .map(|j| (0..d).map(|c| q[[i, h * d + c]] * k[[j, h * d + c]]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..d {
                cat[[i, h * d + c]] = (0..k.nrows()).map(|j| scores[j].exp() / z * v[[j, h * d + c]]).sum();
            }
        }
    }
    lin(&cat, "o")
}

fn cross_fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for heads in [1, 3] {
        for _ in 0..10 {
            let mut p = ParamStore::new();
            for site in ["cross.rgb", "cross.delta", "fuse"] {
                for m in ["q", "k", "v", "o"] {
                    p.insert(format!("{site}.{m}.w"), random_matrix(&mut rng, 3, 3));
                    p.insert(format!("{site}.{m}.b"), random_matrix(&mut rng, 1, 3));
                }
            }
            let v_r = random_matrix(&mut rng, 4, 3);
            let v_d = random_matrix(&mut rng, 3, 3);

            let aligned = Array2::from_shape_fn((3, 3), |(t, c)| 0.5 * (v_r[[t, c]] + v_r[[t + 1, c]]));
            let r_out = brute_attention(&p, "cross.rgb", &v_d, &aligned, heads) + &aligned;
            let d_out = brute_attention(&p, "cross.delta", &aligned, &v_d, heads) + &v_d;
            let fused = brute_attention(&p, "fuse", &d_out, &r_out, heads) + &d_out;

            let mut ctx = Ctx::eval(&p);
            let vr = ctx.graph.constant(v_r.clone());
            let vd = ctx.graph.constant(v_d.clone());
            let al = align_to_delta(&mut ctx, vr);
            let a_r = cross_attend(&mut ctx, "cross.rgb", vd, al, heads).map_err(|e| e.to_string())?;
            let g_r = ctx.graph.add(a_r, al);
            let a_d = cross_attend(&mut ctx, "cross.delta", al, vd, heads).map_err(|e| e.to_string())?;
            let g_d = ctx.graph.add(a_d, vd);
            let g_f = fuse(&mut ctx, g_r, g_d, heads).map_err(|e| e.to_string())?;
            for (got, want) in [(g_r, &r_out), (g_d, &d_out), (g_f, &fused)] {
                let diff = (ctx.graph.value(got) - want).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
                worst = worst.max(diff);
            }
            cases += 1;
        }
    }
    check(worst < 1e-6, format!("max deviation {worst:e}"))?;
    Ok(format!("{cases} cases, max deviation {worst:.1e}"))
}

fn gradient_check() -> Outcome {
    let cfg = ModelConfig {
        crop_height: 16,
        crop_width: 16,
        patch: 8,
        embed: 8,
        spatial_layers: 1,
        temporal_layers: 1,
        heads_self: 2,
        heads_cross: 4,
        ffn_multiplier: 2,
        dropout: 0.0,
        classifier_hidden: Some(4),
        max_frames: 4,
        seed: 0,
    };
    let loss = LossConfig::default();
    let h = 1e-3;
    let (mut pass, mut total) = (0usize, 0usize);
    for seed in 0..5u64 {
        let model = Model::new(ModelConfig { seed, ..cfg }).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (rgb, delta) = tensors(&rand_frames(&mut rng, 3, 16, 16));
        let label = (seed % 2) as f64;
        let objective = |params: &ParamStore| -> f64 {
            let mut ctx = Ctx::eval(params);
            let (_, v) = sample_objective(&mut ctx, &cfg, &loss, rgb.view(), delta.view(), label).unwrap();
            v.l_total
        };
        let mut ctx = Ctx::differentiable(model.params());
        let (node, _) = sample_objective(&mut ctx, &cfg, &loss, rgb.view(), delta.view(), label).map_err(|e| e.to_string())?;
        let grads = ctx.graph.backward(node);
        let mut params = model.params().clone();
        for name in model.params().names() {
            let analytic = ctx.bound().get(name).and_then(|v| grads.get(*v)).cloned();
            let shape = model.params().get(name).unwrap().dim();
            let analytic = analytic.unwrap_or_else(|| Array2::zeros(shape));
            for idx in ndarray::indices(shape) {
                let orig = params.get(name).unwrap()[idx];
                let mut at = |dx: f64| {
                    params.get_mut(name).unwrap()[idx] = orig + dx;
                    objective(&params)
                };
                // fourth-order central stencil
                let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                params.get_mut(name).unwrap()[idx] = orig;
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                total += 1;
                if rel < 1e-3 {
                    pass += 1;
                }
            }
        }
    }
    let frac = pass as f64 / total as f64;
    check(frac >= 0.95, format!("{pass}/{total} within 1e-3 ({:.2}%)", 100.0 * frac))?;
    Ok(format!("{pass}/{total} parameters within 1e-3 ({:.2}%)", 100.0 * frac))
}

/// Textbook global SSIM on jointly min-max normalised inputs.
fn brute_ssim(a: &[f64], b: &[f64], c1: f64, c2: f64) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let r = (hi - lo).max(1e-12);
    let x: Vec<f64> = a.iter().map(|v| (v - lo) / r).collect();
    let y: Vec<f64> = b.iter().map(|v| (v - lo) / r).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

fn ssim_avgs_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = random_matrix(&mut rng, 5, 7);
        let y = random_matrix(&mut rng, 5, 7);
        let s = ssim(x.view(), x.view()).map_err(|e| e.to_string())?;
        check((s - 1.0).abs() < 1e-12, format!("ssim(x, x) = {s}"))?;
        let (ab, ba) = (ssim(x.view(), y.view()).unwrap(), ssim(y.view(), x.view()).unwrap());
        check((ab - ba).abs() < 1e-12, format!("asymmetric: {ab} vs {ba}"))?;
    }
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let grid = Array4::from_shape_fn((4, 3, 3, 2), |_| rng.random_range(-2.0..2.0));
        let got = avg_similarity(grid.view(), &cfg).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                let mut per_channel = 0.0;
                for c in 0..2 {
                    let a: Vec<f64> = (0..3).flat_map(|y| (0..3).map(move |x| (y, x))).map(|(y, x)| grid[[i, y, x, c]]).collect();
                    let b: Vec<f64> = (0..3).flat_map(|y| (0..3).map(move |x| (y, x))).map(|(y, x)| grid[[j, y, x, c]]).collect();
                    per_channel += brute_ssim(&a, &b, cfg.ssim_c1, cfg.ssim_c2);
                }
                sum += per_channel / 2.0;
                pairs += 1;
            }
        }
        let want = ((sum / pairs as f64 + 1.0) / 2.0).clamp(cfg.clamp_eps, 1.0 - cfg.clamp_eps);
        worst = worst.max((got - want).abs());
    }
    check(worst < 1e-9, format!("AvgS deviates by {worst:e}"))?;
    let l = inconsistency_loss(&[0.9, 0.8], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let want = -0.5 * (0.9f64.ln() + 0.8f64.ln());
    check((l - want).abs() < 1e-9, format!("loss {l} vs {want}"))?;
    check((l - 0.1643).abs() < 5e-5, format!("loss {l} is not 0.1643"))?;
    Ok(format!("AvgS max deviation {worst:.1e}, hand loss {l:.6}"))
}

fn oracle_local(series: &[Option<FrameFeature>], l: usize, threshold: f64) -> Option<Vec<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for s in 0..=series.len().saturating_sub(l) {
        let w = &series[s..s + l];
        if w.iter().any(|f| f.is_none()) {
            continue;
        }
        let mean = w.iter().map(|f| f.unwrap().ratio).sum::<f64>() / l as f64;
        if mean < threshold {
            continue;
        }
        if best.map_or(true, |(_, m)| mean > m) {
            best = Some((s, mean));
        }
    }
    best.map(|(s, _)| (s..s + l).collect())
}

/// Enumerates every gap-feasible set of `g` frames and keeps the one whose
/// sorted ranking keys are lexicographically smallest.
fn oracle_global(series: &[Option<FrameFeature>], local: &[usize], g: usize, gap: usize, tol: f64) -> Option<Vec<usize>> {
    let mr = local.iter().map(|&i| series[i].unwrap().ratio).sum::<f64>() / local.len() as f64;
    let ma = local.iter().map(|&i| series[i].unwrap().aspect).sum::<f64>() / local.len() as f64;
    let keys: Vec<(bool, f64, usize)> = (0..series.len())
        .filter(|&i| series[i].is_some() && local.iter().all(|&l| i.abs_diff(l) >= gap))
        .map(|i| {
            let f = series[i].unwrap();
            let d = (f.ratio - mr).abs();
            let strict = d <= tol * mr && (f.aspect - ma).abs() <= tol * ma;
            (!strict, d, i)
        })
        .collect();
    let mut best: Option<Vec<(bool, f64, usize)>> = None;
    let mut combo: Vec<usize> = Vec::new();
    fn rec(
        keys: &[(bool, f64, usize)],
        from: usize,
        g: usize,
        gap: usize,
        combo: &mut Vec<usize>,
        best: &mut Option<Vec<(bool, f64, usize)>>,
    ) {
        if combo.len() == g {
            let mut set: Vec<(bool, f64, usize)> = combo.iter().map(|&k| keys[k]).collect();
            for a in 0..set.len() {
                for b in a + 1..set.len() {
                    if set[a].2.abs_diff(set[b].2) < gap {
                        return;
                    }
                }
            }
            set.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)));
            let better = match best {
                None => true,
                Some(b) => set
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)).then(x.2.cmp(&y.2)))
                    .find(|o| o.is_ne())
                    .is_some_and(|o| o.is_lt()),
            };
            if better {
                *best = Some(set);
            }
            return;
        }
        for k in from..keys.len() {
            combo.push(k);
            rec(keys, k + 1, g, gap, combo, best);
            combo.pop();
        }
    }
    rec(&keys, 0, g, gap, &mut combo, &mut best);
    best.map(|b| {
        let mut idx: Vec<usize> = b.iter().map(|k| k.2).collect();
        idx.sort_unstable();
        idx
    })
}

fn selector_oracle() -> Outcome {
    let fps = 25.0;
    let base = SelectorConfig::default();
    let gap = base.gap_frames(fps);
    check(gap == 3, format!("0.09 s at 25 fps gives gap {gap}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut selected, mut rejected) = (0, 0);
    for case in 0..200 {
        let n = rng.random_range(8..=60);
        let missing = rng.random_range(0.0..0.15);
        let series: Vec<Option<FrameFeature>> = (0..n)
            .map(|_| {
                (rng.random::<f64>() >= missing).then(|| FrameFeature {
                    ratio: rng.random_range(0.0..0.4),
                    aspect: rng.random_range(0.2..0.6),
                })
            })
            .collect();
        let cfg = SelectorConfig {
            local_frames: rng.random_range(2..=5),
            global_frames: rng.random_range(1..=3),
            open_threshold: rng.random_range(0.0..0.25),
            ..base
        };
        let want_local = oracle_local(&series, cfg.local_frames, cfg.open_threshold);
        let got_local = select_local_window(&series, &cfg).ok();
        check(got_local == want_local, format!("case {case}: local {got_local:?} vs {want_local:?}"))?;
        let Some(local) = want_local else {
            rejected += 1;
            continue;
        };
        let want = oracle_global(&series, &local, cfg.global_frames, gap, cfg.match_tolerance);
        let got = select_global_frames(&series, &local, &cfg, fps).ok();
        check(got == want, format!("case {case}: global {got:?} vs {want:?}"))?;
        let Some(global) = got else {
            rejected += 1;
            continue;
        };
        for (a, &x) in global.iter().enumerate() {
            check(local.iter().all(|&l| l.abs_diff(x) >= gap), format!("case {case}: {x} near local block"))?;
            check(global[a + 1..].iter().all(|&y| y.abs_diff(x) >= gap), format!("case {case}: globals too close"))?;
        }
        selected += 1;
    }
    Ok(format!("200 series agree ({selected} selected, {rejected} rejected), gap = {gap} frames"))
}

fn oracle_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l).count() as f64;
        let predicted = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, l)| **l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, l)| !**l) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = rng.random_range(4..40);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let coarse = case % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if coarse {
                    (s * 5.0).round() / 5.0
                } else {
                    s
                }
            })
            .collect();
        let ap = average_precision(&scores, &labels).map_err(|e| e.to_string())?;
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((ap - oracle_ap(&scores, &labels)).abs());
        worst = worst.max((a - oracle_auc(&scores, &labels)).abs());
    }
    check(worst < 1e-9, format!("max deviation {worst:e}"))?;
    Ok(format!("20 instances, max deviation {worst:.1e}"))
}

fn loss_weighting() -> Outcome {
    let cfg = LossConfig::default();
    check(cfg.lambda_cls == 1.0 && cfg.lambda_il == 5.0, format!("weights {} and {}", cfg.lambda_cls, cfg.lambda_il))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (a, b): (f64, f64) = (rng.random_range(0.0..5.0), rng.random_range(0.0..5.0));
        check(total_loss(a, b, &cfg) == 1.0 * a + 5.0 * b, "scalar total differs")?;
        let mut g = lipinc::autograd::Graph::new();
        let (va, vb) = (g.scalar_constant(a), g.scalar_constant(b));
        let t = total_loss_graph(&mut g, va, vb, &cfg);
        check(g.scalar(t) == 1.0 * a + 5.0 * b, "graph total differs")?;
    }
    let cfg_model = ModelConfig::toy();
    let model = Model::new(cfg_model).map_err(|e| e.to_string())?;
    for label in [0.0, 1.0] {
        let (rgb, delta) = tensors(&rand_frames(&mut rng, 8, 64, 144));
        let mut ctx = Ctx::eval(model.params());
        let (_, v) = sample_objective(&mut ctx, &cfg_model, &cfg, rgb.view(), delta.view(), label).map_err(|e| e.to_string())?;
        check(v.l_total == 1.0 * v.l_cls + 5.0 * v.l_il, format!("{v:?}"))?;
    }
    Ok("total = 1*classification + 5*inconsistency, exact".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct Trained {
    model: Model,
    train_auc: f64,
    held_out_auc: f64,
    seconds: f64,
}

fn toy_dir(root: &Path, name: &str, spec: &ToySpec) -> Result<DatasetManifest, String> {
    synthesize_toy_dataset(spec, &root.join(name)).map_err(|e| e.to_string())
}

fn clips(manifest: &DatasetManifest) -> Result<Vec<Clip>, String> {
    let (clips, skipped) = prepare_manifest(
        manifest,
        &SelectorConfig::default(),
        &RobustnessTransform::Identity,
        &LandmarkSource::default(),
    );
    check(skipped.is_empty(), format!("skipped {skipped:?}"))?;
    Ok(clips)
}

fn train_seed(root: &Path, seed: u64) -> Result<Trained, String> {
    let start = Instant::now();
    let train_spec = ToySpec {
        count: 40,
        inconsistency_strength: 0.5,
        seed,
        ..ToySpec::default()
    };
    let held_spec = ToySpec {
        count: 20,
        seed: 1000 + seed,
        split: Some(Split::Test),
        ..train_spec.clone()
    };
    let train_clips = clips(&toy_dir(root, &format!("train_{seed}"), &train_spec)?)?;
    let held_clips = clips(&toy_dir(root, &format!("held_{seed}"), &held_spec)?)?;
    let model = Model::new(ModelConfig { seed, ..ModelConfig::toy() }).map_err(|e| e.to_string())?;
    let config = TrainConfig { seed, ..TrainConfig::toy() };
    let mut trainer = Trainer::new(model, LossConfig::default(), config).map_err(|e| e.to_string())?;
    fit(&mut trainer, &train_clips, &[], None).map_err(|e| e.to_string())?;
    let score = |c: &[Clip]| -> Result<f64, String> {
        let r = evaluate_clips(&trainer.model, c, vec![], "toy", &RobustnessTransform::Identity).map_err(|e| e.to_string())?;
        Ok(r.auc)
    };
    let train_auc = score(&train_clips)?;
    let held_out_auc = score(&held_clips)?;
    Ok(Trained {
        model: trainer.model.clone(),
        train_auc,
        held_out_auc,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn toy_overfit(runs: &[Trained]) -> Outcome {
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let train = median(runs.iter().map(|r| r.train_auc).collect());
    let held = median(runs.iter().map(|r| r.held_out_auc).collect());
    let detail = format!(
        "median train AUC {train:.3}, held-out AUC {held:.3}, slowest seed {slowest:.1} s (per seed: {})",
        runs.iter()
            .map(|r| format!("{:.3}/{:.3}", r.train_auc, r.held_out_auc))
            .collect::<Vec<_>>()
            .join(", ")
    );
    check(train >= 0.95 && held >= 0.90 && slowest <= 300.0, detail.clone())?;
    Ok(detail)
}

fn localization(runs: &[Trained]) -> Outcome {
    let pred: Vec<bool> = (0..50).map(|i| (10..30).contains(&i)).collect();
    let truth: Vec<bool> = (0..50).map(|i| (20..40).contains(&i)).collect();
    let v = iou(&pred, &truth).map_err(|e| e.to_string())?;
    check((v - 1.0 / 3.0).abs() < 1e-12, format!("hand IoU {v}"))?;

    let cfg = LocalizeConfig::default();
    let pattern = [Label::Real, Label::Fake, Label::Fake, Label::Real, Label::Fake, Label::Real];
    let video = synthesize_concat_video(&pattern, 1.0, 25.0, 0.5, 9).map_err(|e| e.to_string())?;
    let truth = fake_mask_of(&video.mask);
    let lms = toy_landmarks(&video.stream);
    let r = localize("oracle", &video.stream, &lms, &OracleScorer { truth: truth.clone() }, Some(&truth), &cfg)
        .map_err(|e| e.to_string())?;
    check(r.iou == Some(1.0) && r.predicted_mask == truth, format!("oracle IoU {:?}", r.iou))?;

    let mut per_seed = Vec::new();
    for (k, run) in runs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + k as u64);
        let (mut pred, mut truth) = (Vec::new(), Vec::new());
        for v in 0..3 {
            let mut segs: Vec<Label> = (0..8).map(|_| if rng.random() { Label::Fake } else { Label::Real }).collect();
            segs[0] = Label::Real;
            segs[7] = Label::Fake;
            let video = synthesize_concat_video(&segs, 1.0, 25.0, 0.5, 500 + 10 * k as u64 + v).map_err(|e| e.to_string())?;
            let t = fake_mask_of(&video.mask);
            let scorer = ModelScorer {
                model: &run.model,
                selector: SelectorConfig::default(),
            };
            let r = localize("concat", &video.stream, &toy_landmarks(&video.stream), &scorer, Some(&t), &cfg)
                .map_err(|e| e.to_string())?;
            pred.extend(r.predicted_mask);
            truth.extend(t);
        }
        per_seed.push(iou(&pred, &truth).map_err(|e| e.to_string())?);
    }
    let m = median(per_seed.clone());
    let detail = format!(
        "hand IoU 1/3, oracle IoU 1.0, trained median IoU {m:.3} (per seed {:?})",
        per_seed.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
    );
    check(m >= 0.8, detail.clone())?;
    Ok(detail)
}

fn fake_mask_of(mask: &[Label]) -> Vec<bool> {
    lipinc::localize::fake_mask(mask)
}

fn robustness(root: &Path, model: &Model) -> Outcome {
    let manifest = load_manifest(&root.join("held_0").join("manifest.tsv")).map_err(|e| e.to_string())?;
    let selector = SelectorConfig::default();
    let source = LandmarkSource::default();

    let mut baseline_clips = Vec::new();
    for e in &manifest.entries {
        let video = read_video(&e.path).map_err(|e| e.to_string())?;
        let lms = toy_landmarks(&video);
        baseline_clips.push(clip_from_video(&e.path, e.label, &video, &lms, &selector)?);
    }
    let baseline = evaluate_clips(model, &baseline_clips, vec![], "toy", &RobustnessTransform::Identity).map_err(|e| e.to_string())?;
    let sweep = robustness_sweep(&manifest, "toy", model, &selector, &source, &[RobustnessTransform::Identity])
        .map_err(|e| e.to_string())?;
    let id = &sweep[0];
    check(
        id.ap == baseline.ap && id.auc == baseline.auc && id.scores == baseline.scores,
        format!("identity AP {} AUC {} vs baseline AP {} AUC {}", id.ap, id.auc, baseline.ap, baseline.auc),
    )?;

    let mut videos = 0;
    for dir in ["train_0", "held_0"] {
        let m = load_manifest(&root.join(dir).join("manifest.tsv")).map_err(|e| e.to_string())?;
        for e in &m.entries {
            let video = read_video(&e.path).map_err(|e| e.to_string())?;
            let (w, h) = video.dimensions();
            for scale in [0.5, 0.75] {
                let out = apply_robustness_transform(&video, &RobustnessTransform::Rescale { scale }).map_err(|e| e.to_string())?;
                let want = ((w as f64 * scale) as u32, (h as f64 * scale) as u32);
                check(
                    out.dimensions() == want && (w as f64 * scale).fract() == 0.0 && (h as f64 * scale).fract() == 0.0,
                    format!("{}: SR_{scale} gives {:?} from {w}x{h}", e.path.display(), out.dimensions()),
                )?;
            }
            let light = compressed_size(&video, 23).map_err(|e| e.to_string())?;
            let heavy = compressed_size(&video, 40).map_err(|e| e.to_string())?;
            check(heavy < light, format!("{}: CF_40 {heavy} bytes, CF_23 {light} bytes", e.path.display()))?;
            videos += 1;
        }
    }
    Ok(format!(
        "identity AP {:.3} AUC {:.3} equals baseline; SR and CF checks hold on {videos} videos",
        id.ap, id.auc
    ))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let r = f();
        let status = if r.is_ok() { "PASS" } else { "FAIL" };
        let detail = match &r {
            Ok(d) | Err(d) => d.clone(),
        };
        println!("{status} {name}: {detail} [{:.1} s]", start.elapsed().as_secs_f64());
        results.push((name, r));
    };
    run("shape suite", &shape_suite);
    run("delta algebra", &delta_algebra);
    run("attention rows are distributions", &attention_rows);
    run("cross-attention and fusion oracle", &cross_fusion_oracle);
    run("gradient check", &gradient_check);
    run("SSIM and AvgS oracles", &ssim_avgs_oracles);
    run("selector oracle", &selector_oracle);
    run("metric oracles", &metric_oracles);
    run("loss weighting", &loss_weighting);

    let root = TempDir::new().expect("temp dir");
    let trained: Result<Vec<Trained>, String> = (0..3).map(|s| train_seed(root.path(), s)).collect();
    match &trained {
        Ok(runs) => {
            run("toy overfit", &|| toy_overfit(runs));
            run("localization", &|| localization(runs));
            run("robustness harness", &|| robustness(root.path(), &runs[0].model));
        }
        Err(e) => {
            for name in ["toy overfit", "localization", "robustness harness"] {
                println!("FAIL {name}: training failed: {e}");
                results.push((name, Err(e.clone())));
            }
        }
    }

    let failed: Vec<&str> = results.iter().filter(|(_, r)| r.is_err()).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
