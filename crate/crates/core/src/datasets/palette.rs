use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// `n` colors with hues `offset + i/n (mod 1)`, full saturation and value.
pub fn palette(n: usize, offset: f64) -> Result<Vec<Rgb>> {
    if n == 0 {
        return Err(Error::Argument("palette needs at least one color".into()));
    }
    if !offset.is_finite() {
        return Err(Error::Argument(format!("palette offset {offset} is not finite")));
    }
    let offset = offset.rem_euclid(1.0);
    Ok((0..n)
        .map(|i| hsv_to_rgb((offset + i as f64 / n as f64).rem_euclid(1.0), 1.0, 1.0))
        .collect())
}

/// Standard sector-based HSV → RGB with h, s, v in [0, 1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to8 = |c: f64| (c * 255.0).round().clamp(0.0, 255.0) as u8;
    [to8(r), to8(g), to8(b)]
}

/// 8-bit channel value mapped to [−1, 1]: `2c/255 − 1`.
pub fn to_unit(c: f64) -> f32 {
    (2.0 * c / 255.0 - 1.0) as f32
}
