//! Fixed-precision numeric text output.
//!
//! Every number written by this crate goes through [`sig9`], which keeps nine
//! significant digits and prints the shortest decimal that parses back to the
//! same rounded value. [`round9`] is the matching in-memory quantizer: a value
//! passed through it survives a write/parse cycle bit-for-bit.

/// Rounds `x` to nine significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Formats `x` with nine significant digits.
pub fn sig9(x: f64) -> String {
    let r = round9(x);
    if r == 0.0 {
        // collapse -0
        return "0".to_string();
    }
    format!("{r}")
}
