//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use csalign::divergence::resolve_bandwidth;
use csalign::losses::{pairwise_sum_loss, PairMeasure};
use csalign::pmf::{association_count, reset_association_count};
use csalign::train::{ablation_run, generate_synthetic, init_encoders, train_run, SynthConfig, TrainConfig};
use csalign::{
    bimodal_cmpm_cs, coral_loss, cs_divergence, gcs_divergence, gcs_divergence_unnormalized, gcs_ring_loss,
    kl_alignment, loss_gradient, mmd_squared, AlignConfig, Bandwidth, EmbeddingBatch, KlConfig, LossKind,
    MmdConfig, ModalityRing, PmfKind, PmfMatrix, Strategy,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// independent helpers
// ---------------------------------------------------------------------------

fn flat_dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Direct ratio form of the generalized CS divergence.
fn gcs_oracle(ps: &[Vec<f64>]) -> f64 {
    let m = ps.len();
    let k = ps[0].len();
    let num: f64 = (0..k).map(|j| ps.iter().map(|p| p[j]).product::<f64>()).sum();
    let den: f64 = ps.iter().map(|p| p.iter().map(|v| v.powi(m as i32)).sum::<f64>().powf(1.0 / m as f64)).product();
    -(num / den).ln()
}

fn gcs(ps: &[Vec<f64>]) -> f64 {
    let r: Vec<&[f64]> = ps.iter().map(Vec::as_slice).collect();
    gcs_divergence(&r).unwrap().value
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut negative, mut nonzero_identical, mut insensitive, mut oracle_gap) = (0, 0, 0, 0.0f64);
    let mut smallest_bumped = f64::INFINITY;
    let mut insensitive_by_m = [0usize; 6];
    for _ in 0..1000 {
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| flat_dirichlet(&mut rng, k)).collect();
        let v = gcs(&tuple);
        let c = cs_divergence(&tuple[0], &tuple[1]).unwrap().value;
        oracle_gap = oracle_gap.max((v - gcs_oracle(&tuple)).abs());
        if v < -1e-12 || c < -1e-12 {
            negative += 1;
        }

        let p = flat_dirichlet(&mut rng, k);
        let same = vec![p.clone(); m];
        if gcs(&same).abs() > 1e-12 || cs_divergence(&p, &p).unwrap().value.abs() > 1e-12 {
            nonzero_identical += 1;
        }

        let mut bumped = p.clone();
        bumped[rng.random_range(0..k)] += 0.01;
        let s: f64 = bumped.iter().sum();
        bumped.iter_mut().for_each(|x| *x /= s);
        let mut tuple = same;
        tuple[rng.random_range(0..m)] = bumped.clone();
        let low = gcs(&tuple).min(cs_divergence(&p, &bumped).unwrap().value);
        smallest_bumped = smallest_bumped.min(low);
        if !(low > 1e-6) {
            insensitive += 1;
            insensitive_by_m[m] += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        negative == 0 && nonzero_identical == 0 && insensitive == 0 && elapsed < Duration::from_secs(5),
        format!(
            "negative={negative} identical>1e-12={nonzero_identical} perturbed<=1e-6={insensitive} \
             (by M 2..5: {:?}, min {smallest_bumped:.2e}) max|lib-oracle|={oracle_gap:.1e} time={elapsed:.2?}",
            &insensitive_by_m[2..]
        ),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..200 {
        let m = rng.random_range(3..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| flat_dirichlet(&mut rng, k)).collect();
        let base = gcs(&tuple);
        for perm in permutations(&(0..m).collect::<Vec<_>>()) {
            let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| tuple[i].clone()).collect();
            worst = worst.max((gcs(&permuted) - base).abs());
            checked += 1;
        }
    }
    verdict(worst <= 1e-12, format!("{checked} permutations, max deviation {worst:.2e}"))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=5);
        let k = rng.random_range(2..=64);
        let tuple: Vec<Vec<f64>> = (0..m).map(|_| flat_dirichlet(&mut rng, k)).collect();
        let scaled: Vec<Vec<f64>> = tuple
            .iter()
            .map(|p| {
                let c = 10f64.powf(rng.random_range(-3.0..=3.0));
                p.iter().map(|v| v * c).collect()
            })
            .collect();
        let r = |t: &[Vec<f64>]| {
            let refs: Vec<&[f64]> = t.iter().map(Vec::as_slice).collect();
            gcs_divergence_unnormalized(&refs).unwrap().value
        };
        let (a, b) = (r(&tuple), r(&scaled));
        worst = worst.max((a - b).abs() / a.abs());
    }
    verdict(worst <= 1e-9, format!("max relative deviation {worst:.2e}"))
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=64);
        let p = flat_dirichlet(&mut rng, k);
        let q = flat_dirichlet(&mut rng, k);
        worst = worst.max((gcs(&[p.clone(), q.clone()]) - cs_divergence(&p, &q).unwrap().value).abs());
    }
    verdict(worst <= 1e-12, format!("max |GCS - CS| {worst:.2e}"))
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut below, mut uniform_gap) = (0, 0.0f64);
    for _ in 0..500 {
        let k = rng.random_range(2..=64);
        let m = rng.random_range(2..=5);
        let p = flat_dirichlet(&mut rng, k);
        let kf = k as f64;
        // With M identical inputs the reported denominator is Σ p^M.
        let den2 = cs_divergence(&p, &p).unwrap().denominator;
        let den_m = gcs_divergence(&vec![p.as_slice(); m]).unwrap().denominator;
        let direct_m: f64 = p.iter().map(|v| v.powi(m as i32)).sum();
        if den2 < 1.0 / kf - 1e-12 || den_m < kf.powi(1 - m as i32) - 1e-12 || direct_m < kf.powi(1 - m as i32) - 1e-12 {
            below += 1;
        }
        let u = vec![1.0 / kf; k];
        uniform_gap = uniform_gap
            .max((cs_divergence(&u, &u).unwrap().denominator - 1.0 / kf).abs())
            .max((gcs_divergence(&vec![u.as_slice(); m]).unwrap().denominator - kf.powi(1 - m as i32)).abs());
    }
    verdict(below == 0 && uniform_gap <= 1e-12, format!("below bound={below}, uniform equality gap {uniform_gap:.2e}"))
}

fn random_batches(m: usize, n: usize, d: usize, seed: u64) -> Vec<EmbeddingBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    (0..m)
        .map(|k| {
            let data = Array2::from_shape_fn((n, d), |_| StandardNormal.sample(&mut rng));
            EmbeddingBatch::new(data, labels.clone(), format!("m{k}")).unwrap()
        })
        .collect()
}

/// Forward loss through the public loss API, with any MMD bandwidths fixed.
fn forward(kind: LossKind, b: &[EmbeddingBatch], sigmas: &[f64]) -> f64 {
    let cfg = AlignConfig::default();
    let pairs = || (0..b.len()).flat_map(|i| (i + 1..b.len()).map(move |j| (i, j)));
    match kind {
        LossKind::BimodalCs => bimodal_cmpm_cs(&b[0], &b[1], &cfg).unwrap().total,
        LossKind::GcsRing(s) => gcs_ring_loss(&ModalityRing::new(b.to_vec(), s).unwrap(), &cfg).unwrap().total,
        LossKind::PairwiseCs => {
            pairwise_sum_loss(&ModalityRing::new(b.to_vec(), Strategy::Mixed).unwrap(), &cfg, PairMeasure::Cs).unwrap().total
        }
        LossKind::PairwiseKl(k) => {
            pairwise_sum_loss(&ModalityRing::new(b.to_vec(), Strategy::Mixed).unwrap(), &cfg, PairMeasure::Kl(k))
                .unwrap()
                .total
        }
        LossKind::Mmd(_) => pairs()
            .zip(sigmas)
            .map(|((i, j), &s)| {
                mmd_squared(b[i].data().view(), b[j].data().view(), &MmdConfig { bandwidth: Bandwidth::Fixed(s) })
                    .unwrap()
            })
            .sum(),
        LossKind::Coral => pairs().map(|(i, j)| coral_loss(b[i].data().view(), b[j].data().view()).unwrap()).sum(),
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let kinds = [
        LossKind::BimodalCs,
        LossKind::GcsRing(Strategy::Clockwise),
        LossKind::GcsRing(Strategy::Counterclockwise),
        LossKind::GcsRing(Strategy::Mixed),
        LossKind::PairwiseCs,
        LossKind::PairwiseKl(KlConfig::default()),
        LossKind::Mmd(Bandwidth::MedianHeuristic),
        LossKind::Coral,
    ];
    // The two-point rule at 1e-5 bottoms out near 1e-11 absolute error,
    // which exceeds the tolerance on coordinates with |g| below ~1e-6. The
    // five-point rule at 5e-4 is accurate to ~1e-13 on these losses.
    let h = 5e-4;
    let mut report = Vec::new();
    let mut pass = true;
    for kind in kinds {
        let mut worst = 0.0f64;
        let mut cases = 0;
        for seed in 0..20u64 {
            for n in [4, 8, 16] {
                for d in [2, 4, 8] {
                    let m = if kind == LossKind::BimodalCs { 2 } else { 3 };
                    let batches = random_batches(m, n, d, seed * 1000 + (n * 10 + d) as u64);
                    let sigmas: Vec<f64> = (0..m)
                        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
                        .map(|(i, j)| {
                            resolve_bandwidth(batches[i].data().view(), batches[j].data().view(), &MmdConfig::default())
                                .unwrap()
                        })
                        .collect();
                    let (_, analytic) = loss_gradient(kind, &batches, &AlignConfig::default()).unwrap();
                    for mi in 0..m {
                        for r in 0..n {
                            for c in 0..d {
                                let probe = |delta: f64| {
                                    let mut moved = batches.clone();
                                    let mut data = moved[mi].data().clone();
                                    data[[r, c]] += delta;
                                    moved[mi] = moved[mi].with_data(data).unwrap();
                                    forward(kind, &moved, &sigmas)
                                };
                                // fourth-order central stencil
                                let fd = (probe(-2.0 * h) - 8.0 * probe(-h) + 8.0 * probe(h) - probe(2.0 * h)) / (12.0 * h);
                                let a = analytic.per_modality[mi][[r, c]];
                                worst = worst.max(rel_err(a, fd));
                            }
                        }
                    }
                    cases += 1;
                }
            }
        }
        pass &= worst <= 1e-5;
        report.push(format!("{}{}={worst:.1e}/{cases}", kind.name(), strategy_suffix(kind)));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    verdict(pass, format!("max rel err per kind [{}] time={elapsed:.2?}", report.join(" ")))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn strategy_suffix(kind: LossKind) -> &'static str {
    match kind {
        LossKind::GcsRing(Strategy::Clockwise) => "(cw)",
        LossKind::GcsRing(Strategy::Counterclockwise) => "(ccw)",
        LossKind::GcsRing(Strategy::Mixed) => "(mixed)",
        _ => "",
    }
}

fn benchmark_data() -> Vec<EmbeddingBatch> {
    generate_synthetic(&SynthConfig {
        num_classes: 8,
        per_class: 200,
        input_dims: vec![64, 64, 64],
        embed_dim: 16,
        class_sep: 6.0,
        noise_sigma: 1.0,
        seed: 0,
    })
    .unwrap()
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let data = benchmark_data();
    let cfg = TrainConfig { loss: csalign::train::TrainLoss::Gcs, strategy: Strategy::Mixed, ..TrainConfig::default() };
    let mut encoders = init_encoders(&data, 16, &cfg);
    let trace = train_run(&data, &mut encoders, &cfg).unwrap();
    let elapsed = start.elapsed();
    let finals = trace.final_metrics();
    let min_p1 = finals.iter().map(|m| m.p_at[&1]).fold(f64::INFINITY, f64::min);
    let all_finite = trace.is_finite() && trace.epochs.iter().all(|e| e.loss.is_finite());
    let (first, last) = (trace.first_loss().unwrap(), trace.last_loss().unwrap());
    let pass = finals.len() == 6
        && min_p1 >= 0.9
        && all_finite
        && last < first
        && trace.epochs.len() <= 100
        && elapsed < Duration::from_secs(300);
    let p1: Vec<String> = finals.iter().map(|m| format!("{}={:.3}", m.direction, m.p_at[&1])).collect();
    verdict(
        pass,
        format!(
            "epochs={} P@1 [{}] finite={all_finite} loss {first:.4} -> {last:.4} time={elapsed:.2?}",
            trace.epochs.len(),
            p1.join(" ")
        ),
    )
}

fn criterion_8() -> Verdict {
    let data = benchmark_data();
    let table = ablation_run(&data, 16, &TrainConfig::default()).unwrap();
    let avg = |s: Strategy| table.row(s).unwrap().avg_p_at[&10];
    let (cw, ccw, mixed) = (avg(Strategy::Clockwise), avg(Strategy::Counterclockwise), avg(Strategy::Mixed));
    let flags_ok = |s: Strategy, expected: usize| table.row(s).unwrap().unsupervised().count() == expected;
    let flagged = flags_ok(Strategy::Clockwise, 3) && flags_ok(Strategy::Counterclockwise, 3) && flags_ok(Strategy::Mixed, 0);
    let cw_unsup: Vec<&str> = table.row(Strategy::Clockwise).unwrap().unsupervised().collect();
    let ccw_unsup: Vec<&str> = table.row(Strategy::Counterclockwise).unwrap().unsupervised().collect();
    verdict(
        mixed >= cw.max(ccw) - 0.02 && flagged,
        format!(
            "avg P@10 mixed={mixed:.4} cw={cw:.4} ccw={ccw:.4}; unsupervised cw={cw_unsup:?} ccw={ccw_unsup:?}"
        ),
    )
}

fn criterion_9() -> Verdict {
    let cfg = AlignConfig::default();
    let mut counts_ok = true;
    let mut counts = Vec::new();
    for m in 2..=8 {
        let ring = ModalityRing::new(random_batches(m, 16, 8, m as u64), Strategy::Mixed).unwrap();
        reset_association_count();
        gcs_ring_loss(&ring, &cfg).unwrap();
        let circular = association_count();
        reset_association_count();
        pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).unwrap();
        let pairwise = association_count();
        counts_ok &= circular == 2 * m as u64 && pairwise == (m * (m - 1)) as u64;
        counts.push(format!("M={m}:{circular}/{pairwise}"));
    }

    let ring = ModalityRing::new(random_batches(8, 64, 16, 42), Strategy::Mixed).unwrap();
    let reps = 30;
    let time = |f: &dyn Fn()| {
        f();
        let t = Instant::now();
        for _ in 0..reps {
            f();
        }
        t.elapsed().as_secs_f64() / reps as f64
    };
    let t_gcs = time(&|| {
        gcs_ring_loss(&ring, &cfg).unwrap();
    });
    let t_pair = time(&|| {
        pairwise_sum_loss(&ring, &cfg, PairMeasure::Cs).unwrap();
    });
    let ratio = t_pair / t_gcs;
    verdict(
        counts_ok,
        format!(
            "circular/pairwise PMF builds [{}]; M=8 time per loss gcs={:.3}ms pairwise={:.3}ms ratio={ratio:.2} (soft >= 2: {})",
            counts.join(" "),
            t_gcs * 1e3,
            t_pair * 1e3,
            if ratio >= 2.0 { "met" } else { "not met" }
        ),
    )
}

fn criterion_10() -> Verdict {
    let s_true = PmfMatrix::new(Array2::eye(3), PmfKind::TrueMatch).unwrap();
    let s_pred = PmfMatrix::new(
        array![[0.5, 0.3, 0.2], [0.25, 0.5, 0.25], [0.1, 0.2, 0.7]],
        PmfKind::Association,
    )
    .unwrap();
    let kl = kl_alignment(&s_pred, &s_true, &KlConfig { epsilon: 0.0 }).unwrap();
    let cs: Vec<f64> = (0..3)
        .map(|i| {
            cs_divergence(&s_pred.row(i).to_vec(), &s_true.row(i).to_vec()).unwrap().value
        })
        .collect();
    verdict(
        !kl.is_finite() && cs.iter().all(|v| v.is_finite()),
        format!("kl(eps=0)={kl} cs rows={cs:.4?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("non-negativity and equality", criterion_1),
        ("symmetry under permutation", criterion_2),
        ("scale invariance", criterion_3),
        ("two-input reduction to CS", criterion_4),
        ("power-sum lower bounds", criterion_5),
        ("analytic vs finite-difference gradients", criterion_6),
        ("desk-scale alignment", criterion_7),
        ("strategy ablation trend", criterion_8),
        ("PMF construction counts and timing", criterion_9),
        ("KL instability vs finite CS", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {name}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
