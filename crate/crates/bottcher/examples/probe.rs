use bottcher::conditioning::*;
use bottcher::laplace::*;
use bottcher::offspring::OffspringDistribution;
use bottcher::tail::*;
use std::time::Instant;

fn main() {
    let d = OffspringDistribution::from_json_spec(r#"{"pmf": {"2":0.5,"3":0.5}}"#).unwrap();
    let cfg = IterationConfig::default();
    let tf = TailFunction::build(&d, 256, &cfg).unwrap();

    // Default theorem1 experiment for mu > 1.
    println!("-- theorem1 defaults, {{2:.5,3:.5}}, k=1 --");
    let t0 = Instant::now();
    let mut config = Theorem1Config::default();
    config.eps_start = 2.0;
    config.eps_decades = 1;
    config.points_per_decade = 8;
    let report = theorem1_experiment(&d, 1, &config).unwrap();
    for e in &report.entries {
        println!(
            "eps={:<8.4} n={:<3} method={:<5} est={:.10} ci={:.2e} prev={:?}",
            e.eps, e.depth, e.method, e.estimate, e.ci_halfwidth, e.estimate_prev_depth
        );
    }
    println!(
        "pass={} monotone={} final={:.6} ({:?})",
        report.pass,
        report.monotone,
        report.final_estimate,
        t0.elapsed()
    );

    // mu = 1 experiment.
    println!("\n-- theorem1 defaults, {{1:.5,2:.5}}, k=2 --");
    let d1 = OffspringDistribution::from_json_spec(r#"{"pmf": {"1":0.5,"2":0.5}}"#).unwrap();
    let t0 = Instant::now();
    let mut config1 = Theorem1Config::default();
    config1.eps_start = 0.3;
    config1.eps_decades = 2;
    config1.points_per_decade = 6;
    let report1 = theorem1_experiment(&d1, 2, &config1).unwrap();
    for e in &report1.entries {
        println!(
            "eps={:<9.5} n={:<3} method={:<5} est={:.8} denom_log10={:.4}",
            e.eps, e.depth, e.method, e.estimate, e.denominator_log10
        );
    }
    println!(
        "pass={} tau={:?} slope={:?} ({:?})",
        report1.pass,
        report1.tau_formula,
        report1.tau_slope,
        t0.elapsed()
    );

    // Tail ratio with naive-only DP at modest depths.
    println!("\n-- tail ratio (naive windows) --");
    for eps in [0.5, 0.4, 0.3, 0.25, 0.2] {
        let prediction = tf.m_eval(eps) * eps.powf(-tf.gamma());
        let ratio: f64 = 2.0 / 2.5;
        let min_depth = ((eps / 2.0f64).ln() / ratio.ln()).ceil() as u32;
        print!("eps={eps:<5} pred={prediction:<10.4}: ");
        for depth in min_depth..=min_depth + 2 {
            let t0 = Instant::now();
            let t = (eps * 2.5f64.powi(depth as i32)).ceil() as u64 - 1;
            if t - 2u64.pow(depth) > 30_000 {
                break;
            }
            let pmf = truncated_generation_log_pmf(&d, depth, t);
            print!(
                "n{depth}:{:.4} ({:?}) ",
                -pmf.log_mass() / prediction,
                t0.elapsed()
            );
        }
        println!();
    }

    // gqrks with the new depth policy.
    println!("\n-- gqrks n=1 m=3 --");
    let t0 = Instant::now();
    let grid = [1.2, 0.9, 0.7, 0.5, 0.4, 0.3, 0.25, 0.2];
    match gqrks_check(&d, &tf, 1, 3, &grid, 16_384) {
        Ok(report) => {
            for row in &report.rows {
                println!(
                    "eps={:<5} N={:<3} lhs={:<11.4} rhs={:<11.4} ratio={:?}",
                    row.eps, row.proxy_depth, row.lhs, row.rhs, row.ratio
                );
            }
            println!("pass = {:?} ({:?})", report.pass, t0.elapsed());
        }
        Err(e) => println!("error: {e}"),
    }

    // gqrks degenerate bracket m = mu^n.
    println!("\n-- gqrks n=1 m=2 (degenerate bracket) --");
    match gqrks_check(&d, &tf, 1, 2, &[0.5, 0.3, 0.2], 16_384) {
        Ok(report) => {
            for row in &report.rows {
                println!(
                    "eps={:<5} N={:<3} lhs={:<11.4} rhs={:<11.4}",
                    row.eps, row.proxy_depth, row.lhs, row.rhs
                );
            }
            println!("pass = {:?}", report.pass);
        }
        Err(e) => println!("error: {e}"),
    }

    // Final-bound suite shape: log P(Z_1 > mu | proxy) / eps^{-gamma}.
    println!("\n-- final bound: log P(Z_1>mu | .) * eps^gamma --");
    for eps in [0.8, 0.6, 0.45, 0.35, 0.25, 0.2, 0.15] {
        let ratio: f64 = 2.0 / 2.5;
        let min_depth = (((eps / 2.0f64).ln() / ratio.ln()).ceil().max(1.0) as u32).max(2);
        let mut depth = min_depth;
        for d2 in min_depth..=60 {
            let t = (eps * 2.5f64.powi(d2 as i32)).ceil() as u64 - 1;
            if t < 2u64.pow(d2) || t - 2u64.pow(d2) > 16_384 {
                break;
            }
            depth = d2;
        }
        let det = exact_conditional_detail(&d, 1, depth, eps, 16_384).unwrap();
        let log_p_gt = det.log_complement - det.log_denominator;
        println!(
            "eps={eps:<5} n={depth} logP(Z1>mu|.)={:<12.4} scaled={:.6}",
            log_p_gt,
            log_p_gt * eps.powf(tf.gamma())
        );
    }
}
