use ndarray::Array1;
use rand::Rng;

/// Inverted dropout: each unit is kept with probability `1 − rate` and
/// scaled by `1/(1 − rate)`. Returns the mask applied, or `None` when the
/// call is the identity (inference or zero rate).
pub fn apply_dropout<R: Rng + ?Sized>(
    v: &mut Array1<f64>,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Option<Array1<f64>> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    if !training || rate == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = Array1::from_shape_fn(v.len(), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
    *v *= &mask;
    Some(mask)
}
