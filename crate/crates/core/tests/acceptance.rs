//! Exit criteria. Each test checks one criterion at its pinned tolerance and
//! prints a single PASS/FAIL line (visible with `--nocapture`).

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use evolution::classic::{
    attention_probabilities, conv2d, local_self_attention, local_self_attention_heads, pointwise,
    ConvWeights, PosKind,
};
use evolution::equivalence::{
    build_scenario, compare_tensors, matrix_rank, regression_grid, run_scenario, OperatorSpec,
    Payload,
};
use evolution::kernel::{ev_fn_sa, relpos_scores};
use evolution::tensor::{matmul, softmax};
use evolution::{ev_apply, Family, Rng, Tensor};

const EQ_TOL: f64 = 1e-9;
const SOFTMAX_TOL: f64 = 1e-12;
const CONV_BUDGET: Duration = Duration::from_secs(5);

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "[criterion {id}] {} {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

/// Seeded random specs inside the desk-scale envelope.
fn sampled_specs(family: Family, count: usize, seed: u64) -> Vec<OperatorSpec> {
    let mut rng = Rng::new(seed);
    let mut pick = |lo: usize, hi: usize| lo + (rng.next_u64() % (hi - lo + 1) as u64) as usize;
    (0..count)
        .map(|n| {
            let k = [1, 3, 5][n % 3];
            let (h, w) = (pick(1, 8), pick(1, 8));
            let (d_in, d_out) = (pick(1, 8), pick(1, 8));
            OperatorSpec::new(family, h, w, d_in, d_out, k, seed + 17 * n as u64)
        })
        .collect()
}

fn max_of(it: impl IntoIterator<Item = f64>) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

#[test]
fn criterion_1_conv_equivalence() {
    let specs = sampled_specs(Family::Conv, 30, 100);
    let start = Instant::now();
    let diffs: Vec<f64> = specs
        .iter()
        .map(|s| run_scenario(s).unwrap().max_abs_diff)
        .collect();
    let elapsed = start.elapsed();
    let worst = max_of(diffs.iter().copied());
    report(
        1,
        "conv equivalence",
        specs.len() >= 20 && worst <= EQ_TOL && elapsed < CONV_BUDGET,
        format!("{} specs, max_abs_diff={worst:.3e} (tol {EQ_TOL:e}), {elapsed:?} (budget {CONV_BUDGET:?})", specs.len()),
    );
}

#[test]
fn criterion_2_single_head_attention() {
    let mut specs = Vec::new();
    for (n, pos) in [PosKind::None, PosKind::Absolute, PosKind::Relative]
        .into_iter()
        .enumerate()
    {
        for s in sampled_specs(Family::Sa, 12, 200 + 1000 * n as u64) {
            let d_k = 1 + (s.seed % 4) as usize;
            specs.push(s.key_dim(d_k).pos_dim(3).pos(pos));
        }
    }
    let worst = max_of(specs.iter().map(|s| run_scenario(s).unwrap().max_abs_diff));
    report(
        2,
        "single-head attention equivalence",
        worst <= EQ_TOL,
        format!(
            "{} specs over none/absolute/relative, max_abs_diff={worst:.3e}",
            specs.len()
        ),
    );
}

#[test]
fn criterion_3_multi_head_attention() {
    let mut fused_worst = 0.0f64;
    let mut unfused_worst = 0.0f64;
    let mut count = 0;
    for m in [2usize, 4] {
        for pos in [PosKind::None, PosKind::Absolute, PosKind::Relative] {
            for k in [1usize, 3, 5] {
                for &(h, w, d_in, d_out) in &[(5, 5, 4, 4), (8, 6, 3, 8)] {
                    let spec = OperatorSpec::new(Family::Msa, h, w, d_in, d_out, k, 300 + count)
                        .heads(m)
                        .key_dim(3)
                        .pos_dim(2)
                        .pos(pos);
                    count += 1;
                    let data = build_scenario(&spec).unwrap();
                    let Payload::Sa { weights, heads } = &data.payload else {
                        unreachable!()
                    };
                    let x = &data.x;
                    let classic = local_self_attention(x, weights, k, *heads).unwrap();

                    let fused = ev_fn_sa(x, weights, k, *heads, true).unwrap();
                    let y = ev_apply(x, &fused).unwrap();
                    fused_worst = fused_worst.max(compare_tensors(&classic, &y, EQ_TOL).unwrap().0);

                    let unfused = ev_fn_sa(x, weights, k, *heads, false).unwrap();
                    let concat = ev_apply(x, &unfused).unwrap();
                    let heads_ref = local_self_attention_heads(x, weights, k, *heads).unwrap();
                    let projected = pointwise(&concat, weights.wo.as_ref().unwrap()).unwrap();
                    unfused_worst = unfused_worst
                        .max(compare_tensors(&classic, &projected, EQ_TOL).unwrap().0)
                        .max(compare_tensors(&heads_ref, &concat, EQ_TOL).unwrap().0);
                }
            }
        }
    }
    report(
        3,
        "multi-head attention equivalence",
        fused_worst <= EQ_TOL && unfused_worst <= EQ_TOL,
        format!("{count} specs, M in {{2,4}}, fused max={fused_worst:.3e}, unfused+wo max={unfused_worst:.3e}"),
    );
}

#[test]
fn criterion_4_involution() {
    let mut specs = Vec::new();
    let mut seed = 400;
    for g in [1usize, 2] {
        for k in [1usize, 3, 5] {
            for &(h, w, d, r) in &[(4, 4, 4, 2), (8, 8, 8, 4), (3, 7, 6, 3), (6, 5, 2, 1)] {
                seed += 1;
                specs.push(
                    OperatorSpec::new(Family::Involution, h, w, d, d, k, seed)
                        .reduction(r)
                        .groups(g),
                );
            }
        }
    }
    let worst = max_of(specs.iter().map(|s| run_scenario(s).unwrap().max_abs_diff));
    report(
        4,
        "involution equivalence",
        worst <= EQ_TOL,
        format!(
            "{} specs, G_inv in {{1,2}}, max_abs_diff={worst:.3e}",
            specs.len()
        ),
    );
}

#[test]
fn criterion_5_conv_via_one_hot_attention() {
    let mut worst = 0.0f64;
    let mut rank_ok = true;
    let mut count = 0;
    for k in [1usize, 3, 5] {
        for &(d_in, d_out, d_h) in &[(4, 4, 1), (4, 4, 2), (6, 5, 3), (8, 8, 2)] {
            let spec = OperatorSpec::new(Family::ConvAsMsa, 6, 7, d_in, d_out, k, 500 + count)
                .head_dim(d_h);
            count += 1;
            let data = build_scenario(&spec).unwrap();
            let Payload::ConvAsMsa { value_heads, wo } = &data.payload else {
                unreachable!()
            };
            // conv weights w[a,b] = wv^{aK+b} · wo^{aK+b}, built here from scratch
            let cw = Tensor::from_fn(&[k, k, d_in, d_out], |ix| {
                let p = ix[0] * k + ix[1];
                (0..d_h)
                    .map(|t| value_heads[p].get(&[ix[2], t]) * wo.get(&[p * d_h + t, ix[3]]))
                    .sum()
            })
            .unwrap();
            let kernel = data.kernel(k).unwrap();
            let y = ev_apply(&data.x, &kernel).unwrap();
            let c = conv2d(&data.x, &ConvWeights::new(cw).unwrap()).unwrap();
            worst = worst.max(compare_tensors(&c, &y, EQ_TOL).unwrap().0);
            assert!(d_h < d_in.min(d_out));
            for i in 0..6 {
                for j in 0..7 {
                    for u in 0..k {
                        for v in 0..k {
                            rank_ok &= matrix_rank(&kernel.slice(i, j, u, v).unwrap(), 1e-9) <= d_h;
                        }
                    }
                }
            }
        }
    }
    report(
        5,
        "conv via one-hot multi-head attention",
        worst <= EQ_TOL && rank_ok,
        format!("{count} specs, max_abs_diff={worst:.3e}, every slice rank <= D_h: {rank_ok}"),
    );
}

#[test]
fn criterion_6_constant_relative_attention() {
    let mut worst = 0.0f64;
    let mut constant = true;
    let mut count = 0;
    for k in [1usize, 3, 5] {
        for &(h, w, d_in, d_out, d_k, d_p) in
            &[(5, 5, 2, 3, 3, 2), (8, 4, 4, 4, 2, 4), (3, 8, 7, 2, 5, 3)]
        {
            let spec = OperatorSpec::new(Family::RelposConst, h, w, d_in, d_out, k, 600 + count)
                .key_dim(d_k)
                .pos_dim(d_p);
            count += 1;
            let data = build_scenario(&spec).unwrap();
            let Payload::RelposConst {
                v,
                wk_hat,
                table,
                wv,
            } = &data.payload
            else {
                unreachable!()
            };
            let kernel = data.kernel(k).unwrap();
            constant &= kernel.is_spatially_constant();
            let probs = softmax(
                &relpos_scores(v, wk_hat, table)
                    .unwrap()
                    .reshape(&[k * k])
                    .unwrap(),
            )
            .unwrap();
            let cw = Tensor::from_fn(&[k, k, d_in, d_out], |ix| {
                probs.data()[ix[0] * k + ix[1]] * wv.get(&[ix[2], ix[3]])
            })
            .unwrap();
            let c = conv2d(&data.x, &ConvWeights::new(cw).unwrap()).unwrap();
            worst = worst.max(
                compare_tensors(&c, &ev_apply(&data.x, &kernel).unwrap(), EQ_TOL)
                    .unwrap()
                    .0,
            );
        }
    }
    report(
        6,
        "constant relative attention",
        constant && worst <= EQ_TOL,
        format!("{count} specs, bitwise spatially constant: {constant}, max_abs_diff={worst:.3e}"),
    );
}

#[test]
fn criterion_7_softmax_normalization() {
    let mut worst = 0.0f64;
    let mut windows = 0usize;
    for spec in regression_grid()
        .iter()
        .filter(|s| matches!(s.family, Family::Sa | Family::Msa))
    {
        let data = build_scenario(spec).unwrap();
        let Payload::Sa { weights, heads } = &data.payload else {
            unreachable!()
        };
        for probs in attention_probabilities(&data.x, weights, spec.k, *heads).unwrap() {
            for win in probs.data().chunks(spec.k * spec.k) {
                windows += 1;
                worst = worst.max((win.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    report(
        7,
        "softmax normalization",
        worst <= SOFTMAX_TOL,
        format!("{windows} windows, max |sum - 1| = {worst:.3e} (tol {SOFTMAX_TOL:e})"),
    );
}

#[test]
fn criterion_8_determinism() {
    let grid = regression_grid();
    let identical = grid.iter().all(|s| {
        let a = run_scenario(s).unwrap();
        let b = run_scenario(s).unwrap();
        a.max_abs_diff.to_bits() == b.max_abs_diff.to_bits()
            && a.pass == b.pass
            && a.kernel_stats == b.kernel_stats
    });
    report(
        8,
        "determinism",
        identical,
        format!(
            "{} specs run twice, bit-identical max_abs_diff: {identical}",
            grid.len()
        ),
    );
}

fn spec_flags(s: &OperatorSpec) -> Vec<String> {
    let mut f = vec![
        format!("--family={}", s.family),
        format!("--h={}", s.h),
        format!("--w={}", s.w),
        format!("--din={}", s.d_in),
        format!("--k={}", s.k),
        format!("--m={}", s.m),
        format!("--g={}", s.g),
        format!("--r={}", s.r),
        format!("--seed={}", s.seed),
    ];
    for (name, v) in [
        ("dout", s.d_out),
        ("dk", s.d_k),
        ("dp", s.d_p),
        ("dh", s.d_h),
    ] {
        if let Some(v) = v {
            f.push(format!("--{name}={v}"));
        }
    }
    let pos = match s.pos_kind {
        PosKind::None => "none",
        PosKind::Absolute => "absolute",
        PosKind::Relative => "relative",
    };
    f.push(format!("--pos={pos}"));
    f
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evolution"))
}

fn verify_config(path: &Path) -> i32 {
    let out = bin()
        .args(["verify", "--config"])
        .arg(path)
        .output()
        .unwrap();
    out.status.code().unwrap()
}

#[test]
fn criterion_9_cli_contract() {
    let grid_status = bin()
        .args(["verify", "--grid"])
        .output()
        .unwrap()
        .status
        .code()
        .unwrap();

    // Fixtures for the whole grid, produced by dump-kernel.
    let dir = tempfile::tempdir().unwrap();
    let mut specs = regression_grid();
    for (n, spec) in specs.iter_mut().enumerate() {
        let name = format!("kernel_{n:03}.json");
        let st = bin()
            .arg("dump-kernel")
            .args(spec_flags(spec))
            .arg("--out")
            .arg(dir.path().join(&name))
            .output()
            .unwrap();
        assert!(st.status.success(), "dump-kernel failed for {spec:?}");
        spec.expected_kernel = Some(name.into());
    }
    let cfg = dir.path().join("grid.json");
    std::fs::write(
        &cfg,
        serde_json::to_string(&serde_json::json!({ "scenarios": specs })).unwrap(),
    )
    .unwrap();
    let clean_status = verify_config(&cfg);

    // Corrupt one value of one fixture.
    let victim = dir.path().join("kernel_042.json");
    let mut fixture: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&victim).unwrap()).unwrap();
    let first = fixture["data"][0].as_f64().unwrap();
    fixture["data"][0] = serde_json::json!(first + 0.25);
    std::fs::write(&victim, fixture.to_string()).unwrap();
    let corrupt_status = verify_config(&cfg);

    report(
        9,
        "cli contract",
        grid_status == 0 && clean_status == 0 && corrupt_status != 0,
        format!(
            "verify --grid exit={grid_status}, grid+fixtures exit={clean_status}, one corrupted fixture exit={corrupt_status}"
        ),
    );
}

#[test]
fn rank_oracle_is_tight_for_generic_products() {
    // Sanity for the rank oracle itself: a generic D_in×D_h by D_h×D_out product
    // has rank exactly D_h.
    let a = evolution::prng_fill(&[6, 2], 1).unwrap();
    let b = evolution::prng_fill(&[2, 5], 2).unwrap();
    assert_eq!(matrix_rank(&matmul(&a, &b).unwrap(), 1e-9), 2);
}
