use serde::{Deserialize, Serialize};

use crate::diffusion::{AnchorPos, StateWindow};
use crate::{Error, Result};

/// States `ŝ_{t-H+1} .. ŝ_{t+H-1}` joined at the anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedStateTraj {
    pub states: Vec<Vec<f64>>,
    pub anchor_index: usize,
}

impl StitchedStateTraj {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn anchor(&self) -> &[f64] {
        &self.states[self.anchor_index]
    }
}

/// `xb[0..H-1] ++ [s_t] ++ xf[1..H]`. Both windows must carry `s_t`
/// bit-exactly in their anchor rows.
pub fn stitch(xb: &StateWindow, s_t: &[f64], xf: &StateWindow) -> Result<StitchedStateTraj> {
    if xb.anchor() != AnchorPos::Last || xf.anchor() != AnchorPos::First {
        return Err(Error::InvalidArgument("stitch needs a backward and a forward window".into()));
    }
    if xb.horizon() != xf.horizon() || xb.dim() != xf.dim() || s_t.len() != xb.dim() {
        return Err(Error::shape(
            "stitch",
            &[xb.horizon(), xb.dim(), xb.dim()],
            &[xf.horizon(), xf.dim(), s_t.len()],
        ));
    }
    if xb.anchor_row() != s_t || xf.anchor_row() != s_t {
        return Err(Error::AnchorMismatch);
    }
    let h = xb.horizon();
    let mut states = Vec::with_capacity(2 * h - 1);
    states.extend(xb.rows().take(h - 1).map(|r| r.to_vec()));
    states.push(s_t.to_vec());
    states.extend(xf.rows().skip(1).map(|r| r.to_vec()));
    Ok(StitchedStateTraj {
        states,
        anchor_index: h - 1,
    })
}
