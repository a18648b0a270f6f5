use crate::error::{Error, Result};
use crate::numerics::{Graph, Var};

/// `mean((s - s_g)^2)` over shots.
pub fn loss_summ(g: &mut Graph, scores: Var, truth: Var) -> Result<Var> {
    let (a, b) = (g.value(scores), g.value(truth));
    if a.numel() != b.numel() {
        return Err(Error::Dimension(format!("{} scores against a {}-shot mask", a.numel(), b.numel())));
    }
    if a.numel() == 0 {
        return Err(Error::EmptySequence);
    }
    let d = g.sub(scores, truth)?;
    let d = g.square(d);
    Ok(g.mean(d))
}

/// `|mean(k) - gamma|`, with a zero subgradient at the kink.
pub fn loss_length(g: &mut Graph, mask: Var, gamma: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Contract(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    if g.value(mask).numel() == 0 {
        return Err(Error::EmptySequence);
    }
    let m = g.mean(mask);
    let m = g.add_scalar(m, -gamma);
    Ok(g.abs(m))
}

/// The value `L = d_g - omega d_q - (1 - omega) d_r` and what each player minimizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialLosses {
    pub value: f64,
    /// `-L`: the critic ascends `L`.
    pub critic_loss: f64,
    /// `-omega d_q`: the only generator-dependent part of `L`.
    pub gen_loss: f64,
}

pub fn adversarial_losses(d_g: f64, d_q: f64, d_r: f64, omega: f64) -> Result<AdversarialLosses> {
    for (name, v) in [("d_g", d_g), ("d_q", d_q), ("d_r", d_r), ("omega", omega)] {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is {v}")));
        }
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Contract(format!("omega must lie in [0, 1], got {omega}")));
    }
    let value = d_g - omega * d_q - (1.0 - omega) * d_r;
    Ok(AdversarialLosses { value, critic_loss: -value, gen_loss: -omega * d_q })
}

/// `-L` on the graph. Without `d_r` (two-player) the random term is absent,
/// which requires `omega = 1`.
pub fn critic_objective(g: &mut Graph, d_g: Var, d_q: Var, d_r: Option<Var>, omega: f64) -> Result<Var> {
    let q = g.scale(d_q, omega);
    let mut l = g.sub(d_g, q)?;
    match d_r {
        Some(r) => {
            let r = g.scale(r, 1.0 - omega);
            l = g.sub(l, r)?;
        }
        None if omega != 1.0 => {
            return Err(Error::Contract(format!("the random term can only be dropped at omega = 1, got {omega}")));
        }
        None => {}
    }
    Ok(g.scale(l, -1.0))
}
