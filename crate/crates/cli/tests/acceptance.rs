//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! its runtime budget. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mguq::calibration::{
    histogram_binning, ighb_with_support, CalibrationSettings, CalibratorRegistry, ClaimSet, IghbStop, LevelSetGrid,
};
use mguq::conformal::{cqr, retain, split_conformal, ConformalRegistry, ConformalSettings, CqrOptions};
use mguq::dataset::{
    derive_groups, generate_synthetic, make_splits, AttributeSpec, Attributes, ClaimRecord, EntityRecord, GroupDef,
    GroupEffect, ScoreDistortion, SyntheticSpec,
};
use mguq::metrics::{asce, coverage_report, gasce};
use mguq::solvers::{fit_logistic, fit_quantile, logistic_objective, FitConfig, Features};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.gen::<f64>() < p
}

/// Nearest grid index with ties to the lower point, independent of the
/// library's rounding.
fn oracle_bin(s: f64, m: usize) -> usize {
    (0..=m)
        .min_by(|&a, &b| {
            let da = (s - a as f64 / m as f64).abs();
            let db = (s - b as f64 / m as f64).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        })
        .unwrap()
}

fn entity(id: usize, claims: &[(f64, bool)], attributes: &[(&str, &str)]) -> EntityRecord {
    let entity_id = format!("e{id}");
    EntityRecord {
        claims: claims
            .iter()
            .enumerate()
            .map(|(j, &(score, label))| ClaimRecord {
                entity_id: entity_id.clone(),
                claim_id: format!("c{j}"),
                score,
                label,
                text: None,
            })
            .collect(),
        entity_id,
        attributes: attributes
            .iter()
            .map(|(a, v)| (a.to_string(), v.to_string()))
            .collect::<Attributes>(),
    }
}

/// Histogram binning leaves every calibration-set level set unbiased.
fn exact_post_hoc_calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 50_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
    let labels: Vec<bool> = scores.iter().map(|&s| bernoulli(&mut rng, s * s)).collect();
    let claims = ClaimSet::from_parts(scores.clone(), labels.clone(), vec![], vec![]).map_err(|e| e.to_string())?;
    let grid = LevelSetGrid::default();

    let started = Instant::now();
    let scorer = histogram_binning(&claims, grid).map_err(|e| e.to_string())?;
    let calibrated = scorer.apply_claims(&claims).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    // bias per input level set and per output level set
    let mut worst: f64 = 0.0;
    for key in [&scores, &calibrated] {
        let mut bins: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for i in 0..n {
            let cell = bins.entry(oracle_bin(key[i], grid.m())).or_default();
            cell.0 += f64::from(u8::from(labels[i])) - calibrated[i];
            cell.1 += 1;
        }
        for (sum, count) in bins.values() {
            worst = worst.max((sum / *count as f64).abs());
        }
    }
    check(
        worst < 1e-10 && elapsed < Duration::from_secs(1),
        format!("max |bias| = {worst:.2e}, fit+apply {:.3} s at 50k claims", elapsed.as_secs_f64()),
    )
}

/// Every IGHB patch is a brute-force argmax and the objective strictly falls.
fn ighb_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut patches_checked = 0;
    for instance in 0..100 {
        let m = rng.gen_range(1..=9);
        let n_groups = rng.gen_range(1..=10);
        let n = rng.gen_range(50..400);
        let shift: f64 = rng.gen_range(-0.3..0.3);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = scores
            .iter()
            .map(|&s| bernoulli(&mut rng, (s + shift).clamp(0.0, 1.0)))
            .collect();
        let density: Vec<f64> = (0..n_groups).map(|_| rng.gen_range(0.1..0.9)).collect();
        let masks: Vec<Vec<bool>> = density
            .iter()
            .map(|&d| (0..n).map(|_| bernoulli(&mut rng, d)).collect())
            .collect();
        let groups: Vec<GroupDef> = (0..n_groups)
            .map(|g| GroupDef::new(vec![("g".into(), format!("{g:02}"))]))
            .collect();
        let min_support = rng.gen_range(1..=5);
        let claims = ClaimSet::from_parts(scores.clone(), labels.clone(), groups.clone(), masks.clone())
            .map_err(|e| e.to_string())?;
        let fit = ighb_with_support(&claims, LevelSetGrid::new(m).unwrap(), 100, min_support)
            .map_err(|e| e.to_string())?;

        let mut state = scores.clone();
        let brute = |state: &[f64]| {
            let mut best: Option<(usize, usize, f64)> = None;
            for bin in 0..=m {
                for g in 0..n_groups {
                    let cell: Vec<usize> = (0..n)
                        .filter(|&i| masks[g][i] && oracle_bin(state[i], m) == bin)
                        .collect();
                    if cell.len() < min_support {
                        continue;
                    }
                    let delta = cell
                        .iter()
                        .map(|&i| f64::from(u8::from(labels[i])) - state[i])
                        .sum::<f64>()
                        / cell.len() as f64;
                    let h = cell.len() as f64 / n as f64 * delta * delta;
                    if best.is_none_or(|(_, _, top)| h > top * (1.0 + 1e-12)) {
                        best = Some((bin, g, h));
                    }
                }
            }
            best
        };
        for (t, patch) in fit.patches().iter().enumerate() {
            let Some((bin, g, h)) = brute(&state) else {
                return Err(format!("instance {instance}: patch {t} but no eligible cell"));
            };
            let chosen = (patch.bin, patch.group.name.clone());
            if chosen != (bin, groups[g].name.clone()) || (fit.objective_trace[t] - h).abs() > 1e-12 * h {
                return Err(format!(
                    "instance {instance}, step {t}: picked {chosen:?}, brute force ({bin}, {})",
                    groups[g].name
                ));
            }
            for i in 0..n {
                if masks[g][i] && oracle_bin(state[i], m) == bin {
                    state[i] += patch.delta;
                }
            }
            patches_checked += 1;
        }
        if !fit.objective_trace.windows(2).all(|w| w[1] < w[0]) {
            return Err(format!("instance {instance}: objective not strictly decreasing"));
        }
        let top = brute(&state).map_or(0.0, |b| b.2);
        let stop_ok = match fit.stop {
            IghbStop::Calibrated => top <= 1e-24,
            IghbStop::NoImprovement => fit.objective_trace.last().is_none_or(|&last| top >= last),
            IghbStop::MaxIterations => fit.patches().len() == 100,
        };
        if !stop_ok {
            return Err(format!("instance {instance}: stop {:?} inconsistent with brute force", fit.stop));
        }
    }
    Ok(format!("100 instances, {patches_checked} patches matched the brute-force argmax"))
}

/// Group-aware calibration repairs group bias the marginal methods leave.
fn multicalibration_repairs_group_bias() -> Outcome {
    let attribute = |name: &str, values: [&str; 2]| AttributeSpec {
        name: name.into(),
        values: values.iter().map(|v| v.to_string()).collect(),
        weights: None,
        presence: 1.0,
    };
    let effect = |attr: &str, value: &str, offset: f64| GroupEffect {
        group: [(attr.to_string(), value.to_string())].into(),
        prob_offset: 0.0,
        score_offset: offset,
    };
    let spec = SyntheticSpec {
        n_entities: 10_000,
        claims_min: 4,
        claims_max: 6,
        prob_low: 0.05,
        prob_high: 0.95,
        distortion: ScoreDistortion::Sharpen { factor: 2.0 },
        attributes: vec![attribute("A", ["a1", "a2"]), attribute("B", ["b1", "b2"])],
        effects: vec![effect("A", "a1", 0.15), effect("B", "b1", -0.15)],
    };
    let data = generate_synthetic(&spec, 3).map_err(|e| e.to_string())?;
    let n_claims: usize = data.entities.iter().map(|e| e.claims.len()).sum();
    let atlas = derive_groups(&data.entities, 2, 0.05).map_err(|e| e.to_string())?;
    let plans = make_splits(&data.entities, 10, 0.8, 3).map_err(|e| e.to_string())?;
    let registry = CalibratorRegistry::builtin();
    let settings = CalibrationSettings::default();
    let grid = settings.grid;

    let mut sums: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for plan in &plans {
        let (cal, test) = plan.partition(&data.entities);
        let cal_claims = ClaimSet::new(&cal, &atlas.groups);
        let retained: Vec<GroupDef> = atlas.retained(&test).into_iter().map(|i| atlas.groups[i].clone()).collect();
        let test_claims = ClaimSet::new(&test, &retained);
        let masks: Vec<Vec<bool>> = (0..retained.len()).map(|g| test_claims.mask(g).to_vec()).collect();
        let mut record = |name: &'static str, scores: &[f64]| -> Result<(), String> {
            let a = asce(scores, test_claims.labels(), &grid).map_err(|e| e.to_string())?;
            let g = gasce(scores, test_claims.labels(), &grid, &retained, &masks).map_err(|e| e.to_string())?;
            let s = sums.entry(name).or_default();
            s.0 += a / plans.len() as f64;
            s.1 += g.max / plans.len() as f64;
            Ok(())
        };
        record("uncalibrated", test_claims.scores())?;
        for name in ["HB", "IGHB", "PS", "GCULR"] {
            let scorer = registry
                .get(name)
                .and_then(|m| m.fit(&cal_claims, &settings))
                .map_err(|e| e.to_string())?;
            record(name, &scorer.apply(&test))?;
        }
    }
    let (raw, _) = sums["uncalibrated"];
    let (hb, hb_g) = sums["HB"];
    let (ps, ps_g) = sums["PS"];
    let ighb_g = sums["IGHB"].1;
    let gculr_g = sums["GCULR"].1;
    let ok = hb * 10.0 <= raw && ps * 10.0 <= raw && ighb_g < 0.5 * hb_g && gculr_g < 0.5 * ps_g;
    check(
        ok,
        format!(
            "{n_claims} claims; ASCE raw {raw:.5} HB {hb:.5} PS {ps:.5}; max gASCE HB {hb_g:.5} IGHB {ighb_g:.5} PS {ps_g:.5} GCULR {gculr_g:.5}"
        ),
    )
}

/// Split conformal reaches the target coverage on exchangeable data.
fn split_conformal_validity() -> Outcome {
    let spec = SyntheticSpec {
        n_entities: 1000,
        claims_min: 1,
        claims_max: 8,
        prob_low: 0.0,
        prob_high: 1.0,
        distortion: ScoreDistortion::Identity,
        attributes: vec![],
        effects: vec![],
    };
    let mut report = Vec::new();
    let mut ok = true;
    for alpha in [0.1, 0.2] {
        let mut coverage = 0.0;
        let mut abs_err = 0.0;
        for trial in 0..200 {
            let data = generate_synthetic(&spec, 1000 + trial).map_err(|e| e.to_string())?;
            let (cal, test) = data.entities.split_at(500);
            let rule = split_conformal(&cal.iter().collect::<Vec<_>>(), alpha).map_err(|e| e.to_string())?;
            let c = test.iter().filter(|e| retain(&rule, e).covered).count() as f64 / test.len() as f64;
            coverage += c / 200.0;
            abs_err += (c - (1.0 - alpha)).abs() / 200.0;
        }
        let err = (coverage - (1.0 - alpha)).abs();
        ok &= err < 0.02;
        report.push(format!(
            "alpha {alpha}: mean coverage {coverage:.4} (error {err:.4}; mean per-trial |error| {abs_err:.4})"
        ));
    }
    check(ok, report.join("; "))
}

/// Two cohorts whose safe thresholds live in different halves of [0, 1].
fn cohort_population(n: usize, seed: u64) -> Vec<EntityRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let cohort = if rng.gen::<bool>() { "a" } else { "b" };
            let tag = if rng.gen::<bool>() { "x" } else { "y" };
            let r: f64 = if cohort == "a" { rng.gen_range(0.0..0.5) } else { rng.gen_range(0.5..1.0) };
            let mut claims = vec![(r, false)];
            for _ in 0..rng.gen_range(2..=6) {
                claims.push((rng.gen::<f64>(), true));
            }
            entity(i, &claims, &[("cohort", cohort), ("tag", tag)])
        })
        .collect()
}

/// Group-aware conformal methods cut per-group coverage error.
fn multivalid_repairs_group_coverage() -> Outcome {
    let entities = cohort_population(2000, 5);
    let atlas = derive_groups(&entities, 2, 0.05).map_err(|e| e.to_string())?;
    let plans = make_splits(&entities, 10, 0.8, 5).map_err(|e| e.to_string())?;
    let registry = ConformalRegistry::builtin();
    let alphas = [0.1, 0.15, 0.2, 0.3, 0.5];
    let methods = ["SC", "MVSC", "CQR", "GCCQR"];

    let mut errors: BTreeMap<(usize, &str), f64> = BTreeMap::new();
    for plan in &plans {
        let (cal, test) = plan.partition(&entities);
        for (ai, &alpha) in alphas.iter().enumerate() {
            let settings = ConformalSettings {
                cqr: CqrOptions {
                    seed: (plan.index * 31 + ai) as u64,
                    ..CqrOptions::default()
                },
                ..ConformalSettings::default()
            };
            for name in methods {
                let rule = registry
                    .get(name)
                    .and_then(|m| m.fit(&cal, &atlas, alpha, &settings))
                    .map_err(|e| format!("{name}: {e}"))?;
                let report = coverage_report(&rule, &test, &atlas, alpha).map_err(|e| e.to_string())?;
                *errors.entry((ai, name)).or_default() += report.mean_group_coverage_error / plans.len() as f64;
            }
        }
    }
    let mut ok = true;
    let mut lines = Vec::new();
    for (ai, alpha) in alphas.iter().enumerate() {
        let e = |m: &str| errors[&(ai, m)];
        ok &= e("MVSC") < e("SC") && e("GCCQR") < e("CQR");
        lines.push(format!(
            "a={alpha}: SC {:.3} MVSC {:.3} CQR {:.3} GCCQR {:.3}",
            e("SC"),
            e("MVSC"),
            e("CQR"),
            e("GCCQR")
        ));
    }
    check(ok, lines.join("; "))
}

/// Intercept-only CQR reduces to split conformal on its conformal half.
fn cqr_degeneracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let n = rng.gen_range(200..600);
        let entities: Vec<EntityRecord> = (0..n)
            .map(|i| {
                let c = rng.gen_range(1..=6);
                let claims: Vec<(f64, bool)> = (0..c)
                    .map(|_| {
                        let s: f64 = rng.gen();
                        (s, bernoulli(&mut rng, s))
                    })
                    .collect();
                entity(i, &claims, &[])
            })
            .collect();
        let refs: Vec<&EntityRecord> = entities.iter().collect();
        let alpha = rng.gen_range(0.05..0.5);
        let options = CqrOptions {
            intercept_only: true,
            seed: instance,
            ..CqrOptions::default()
        };
        let fit = cqr(&refs, alpha, &options).map_err(|e| e.to_string())?;
        let half: Vec<&EntityRecord> = refs
            .iter()
            .copied()
            .filter(|e| fit.conformal_ids.contains(&e.entity_id))
            .collect();
        let sc = split_conformal(&half, alpha).map_err(|e| e.to_string())?;
        worst = worst.max((fit.rule.threshold(refs[0]) - sc.threshold(refs[0])).abs());
    }
    check(worst < 0.01, format!("20 instances, max |CQR - SC| = {worst:.2e}"))
}

/// Gradient, intercept-only logistic and intercept-only pinball checks.
fn solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_grad: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(5..40);
        let d = rng.gen_range(1..5);
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let x = Features::new(n, names, data).unwrap();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let intercept = rng.gen_range(-1.0..1.0);
        let weights: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l2 = rng.gen_range(0.0..0.1);
        let (_, grad) = logistic_objective(&x, &labels, intercept, &weights, l2);
        let h = 1e-6;
        for k in 0..=d {
            let eval = |s: f64| {
                let mut w = weights.clone();
                let mut b = intercept;
                if k == 0 {
                    b += s;
                } else {
                    w[k - 1] += s;
                }
                logistic_objective(&x, &labels, b, &w, l2).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst_grad = worst_grad.max((fd - grad[k]).abs() / grad[k].abs().max(1e-3));
        }
    }

    let mut worst_logit: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(20..500);
        let p = rng.gen_range(0.05..0.95);
        let mut labels: Vec<bool> = (0..n).map(|_| bernoulli(&mut rng, p)).collect();
        labels[0] = true;
        labels[1] = false;
        let mean = labels.iter().filter(|&&y| y).count() as f64 / n as f64;
        let (model, _) = fit_logistic(&Features::empty(n), &labels, &FitConfig::default()).map_err(|e| e.to_string())?;
        worst_logit = worst_logit.max((model.intercept - (mean / (1.0 - mean)).ln()).abs());
    }

    let mut quantile_ok = true;
    for _ in 0..20 {
        let n = rng.gen_range(10..300);
        let tau = rng.gen_range(0.05..0.95);
        let mut y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (model, _) = fit_quantile(&Features::empty(n), &y, tau, &FitConfig::default()).map_err(|e| e.to_string())?;
        y.sort_by(f64::total_cmp);
        let rank = ((tau * n as f64).ceil() as usize).clamp(1, n) - 1;
        let lo = y[rank.saturating_sub(1)];
        let hi = y[(rank + 1).min(n - 1)];
        quantile_ok &= model.intercept >= lo - 1e-12 && model.intercept <= hi + 1e-12;
    }
    check(
        worst_grad < 1e-4 && worst_logit < 1e-3 && quantile_ok,
        format!(
            "max gradient rel. error {worst_grad:.2e}; max |intercept - logit(mean)| {worst_logit:.2e}; pinball quantiles within one gap: {quantile_ok}"
        ),
    )
}

/// gASCE identities on the trivial group and a constructed cancellation.
fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = LevelSetGrid::default();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.gen_range(10..2000);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = scores.iter().map(|&s| bernoulli(&mut rng, s.sqrt())).collect();
        let a = asce(&scores, &labels, &grid).unwrap();
        let g = gasce(&scores, &labels, &grid, &[GroupDef::everything()], &[vec![true; n]]).unwrap();
        worst = worst.max((g.per_group["all"] - a).abs());
    }

    let n = 100_000;
    let in_a: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let labels: Vec<bool> = in_a.iter().map(|&a| bernoulli(&mut rng, if a { 0.7 } else { 0.3 })).collect();
    let scores = vec![0.5; n];
    let groups = [GroupDef::new(vec![("g".into(), "a".into())]), GroupDef::new(vec![("g".into(), "b".into())])];
    let masks = [in_a.clone(), in_a.iter().map(|a| !a).collect()];
    let marginal = asce(&scores, &labels, &grid).unwrap();
    let g = gasce(&scores, &labels, &grid, &groups, &masks).unwrap();
    let in_range = g.per_group.values().all(|v| (0.035..=0.045).contains(v));
    check(
        worst <= 1e-12 && marginal < 1e-3 && in_range,
        format!(
            "trivial-group gap {worst:.1e}; cancellation: ASCE {marginal:.2e}, gASCE {:?}",
            g.per_group.values().map(|v| format!("{v:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn run_cli(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_mguq"))
        .arg("run")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("run exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)))
    }
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for sub in ["aggregate", "plots"] {
        for entry in std::fs::read_dir(dir.join(sub)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.extension().is_some_and(|x| x == "csv") {
                let key = format!("{sub}/{}", path.file_name().unwrap().to_string_lossy());
                files.insert(key, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

/// Two runs of the same config produce byte-identical aggregate CSVs.
fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("synthetic.toml"),
        r#"
n_entities = 400
claims_min = 2
claims_max = 6
distortion = { kind = "sharpen", factor = 1.5 }

[[attributes]]
name = "region"
values = ["north", "south", "east"]

[[attributes]]
name = "size"
values = ["small", "large"]

[[effects]]
group = { region = "north" }
score_offset = 0.1
"#,
    )
    .map_err(|e| e.to_string())?;
    std::fs::write(
        dir.path().join("experiment.toml"),
        "synthetic = \"synthetic.toml\"\nalphas = [0.1, 0.2]\nn_splits = 3\nseed = 9\n",
    )
    .map_err(|e| e.to_string())?;
    let config = dir.path().join("experiment.toml");
    let (out1, out2) = (dir.path().join("out1"), dir.path().join("out2"));
    run_cli(&config, &out1)?;
    run_cli(&config, &out2)?;
    let bundle = |out: &Path| -> Result<std::path::PathBuf, String> {
        let entry = std::fs::read_dir(out)
            .map_err(|e| e.to_string())?
            .next()
            .ok_or("no bundle written")?
            .map_err(|e| e.to_string())?;
        Ok(entry.path())
    };
    let a = csv_files(&bundle(&out1)?)?;
    let b = csv_files(&bundle(&out2)?)?;
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!("{} CSV files compared, {} differ {differing:?}", a.len(), differing.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, Option<Duration>, fn() -> Outcome); 9] = [
        (1, "exact post-hoc calibration", None, exact_post_hoc_calibration),
        (2, "IGHB oracle equivalence", Some(Duration::from_secs(30)), ighb_oracle_equivalence),
        (3, "multicalibration repairs group bias", Some(Duration::from_secs(120)), multicalibration_repairs_group_bias),
        (4, "split-conformal marginal validity", Some(Duration::from_secs(120)), split_conformal_validity),
        (5, "multivalid repairs group coverage", Some(Duration::from_secs(300)), multivalid_repairs_group_coverage),
        (6, "CQR degeneracy", Some(Duration::from_secs(60)), cqr_degeneracy),
        (7, "solver correctness", Some(Duration::from_secs(60)), solver_correctness),
        (8, "metric identities", Some(Duration::from_secs(30)), metric_identities),
        (9, "end-to-end determinism", None, end_to_end_determinism),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let over = budget.is_some_and(|b| elapsed > b);
        let (pass, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", budget.unwrap())),
            Err(d) => (false, d),
        };
        println!(
            "{} criterion {id} ({name}) [{:.2} s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        failed += usize::from(!pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
