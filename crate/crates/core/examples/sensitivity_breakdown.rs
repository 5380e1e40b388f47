//! Partial identification when the contamination term is only bounded:
//! Imbens-Manski intervals for growing bounds, and the smallest symmetric
//! bound that stops the estimate from rejecting zero.

use pexposure::sensitivity::{breakdown_point, imbens_manski_interval, ImForm};

fn main() -> pexposure::Result<()> {
    let (beta, se) = (0.42, 0.15);
    println!("{:>6} {:>8} {:>22} {:>22}", "b", "C", "symmetric", "bracketing");
    for b in [0.0, 0.05, 0.1, 0.2, 0.4] {
        let s = imbens_manski_interval(beta, se, -b, b, 0.05, ImForm::Symmetric)?;
        let k = imbens_manski_interval(beta, se, -b, b, 0.05, ImForm::Bracketing)?;
        println!(
            "{b:>6.2} {:>8.4} [{:>8.4}, {:>8.4}] [{:>8.4}, {:>8.4}]",
            s.im_constant, s.im_interval[0], s.im_interval[1], k.im_interval[0], k.im_interval[1]
        );
    }
    let b = breakdown_point(beta, se, 0.05, 0.0)?;
    println!("breakdown bound for the null of zero: {b:.6}");
    Ok(())
}
