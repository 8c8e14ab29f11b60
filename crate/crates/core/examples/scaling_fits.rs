//! Fit the three capacity and generalization laws and extrapolate from them.
//!
//! ```text
//! cargo run --release --example scaling_fits
//! ```

use factlab::scaling::{compare_size_laws, fit_linear, fit_negexp, fit_powerlaw, FitParams};

fn main() -> factlab::Result<()> {
    // capacity against non-embed size
    let by_size = [(12_736.0, 410.0), (25_440.0, 790.0), (50_848.0, 1_600.0)];
    let lin = fit_linear(&by_size)?;
    println!("linear: {:?}, r² {:.4}", lin.params, lin.r_squared);
    let x = 101_664.0;
    let e = lin.extrapolate(x);
    println!("  at N={x}: {:.0} facts (beyond fitted range: {})", e.value, e.beyond_range);
    println!("  N needed for 10⁶ facts: {:.3e}", lin.inverse(1e6)?);
    let cmp = compare_size_laws(&by_size)?;
    println!(
        "  RMS linear {:.2}, logarithmic {:.2}, square-root {:.2}; linear best: {}",
        cmp.linear_rms,
        cmp.log_rms,
        cmp.sqrt_rms,
        cmp.linear_wins()
    );

    // capacity against epochs
    let by_epochs: Vec<(f64, f64)> =
        [25.0, 50.0, 100.0, 200.0, 400.0].iter().map(|&e: &f64| (e, 900.0 - 700.0 * (-0.012 * e).exp())).collect();
    let neg = fit_negexp(&by_epochs)?;
    if let FitParams::Negexp { c_star, alpha, beta } = neg.params {
        println!("negexp: C*={c_star:.1} α={alpha:.1} β={beta:.5} ({} iterations)", neg.iterations);
        println!("  saturation gap at E=400: {:.1}%", 100.0 * (c_star - neg.eval(400.0)) / c_star);
    }

    // held-out loss against training-set size
    let losses = [(1e3, 2.10), (3e3, 1.93), (1e4, 1.78), (3e4, 1.64)];
    let pl = fit_powerlaw(&losses)?;
    if let FitParams::Powerlaw { d_c, alpha_d } = pl.params {
        println!("power law: L = {d_c:.3}·D^{alpha_d:.4}, log-log r² {:.4}", pl.r_squared);
    }
    Ok(())
}
