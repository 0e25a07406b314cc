//! Online hard mining over a mini-batch: pairwise distance matrix, the six
//! binary mask matrices, and the three per-anchor distance components that
//! feed the missing-modality loss.
//!
//! All operations are pure and stateless.

use ndarray::{Array1, Array2};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{AvtError, Result};

/// One mini-batch of embedded features: `x` is K×D with L2-normalized rows,
/// `y` holds class labels, `b` the binary validity labels (`true` = the
/// originating sensor was functional, `false` = zero-filled placeholder).
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub x: Array2<f64>,
    pub y: Vec<u32>,
    pub b: Vec<bool>,
}

impl MiniBatch {
    pub fn new(x: Array2<f64>, y: Vec<u32>, b: Vec<bool>) -> Result<Self> {
        let k = x.nrows();
        if y.len() != k || b.len() != k {
            return Err(AvtError::shape(
                format!("labels/validity of length {k}"),
                format!("y: {}, b: {}", y.len(), b.len()),
            ));
        }
        Ok(Self { x, y, b })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Symmetric K×K matrix of Euclidean distances with a zero diagonal.
#[derive(Debug, Clone)]
pub struct DistanceMatrix(pub Array2<f64>);

/// The six K×K binary mask matrices. `a_p` marks same-class pairs, `a_v`
/// pairs where both samples are valid, `a_m` its complement, `a_pv` valid
/// positive pairs with the diagonal cleared, `a_n` different-class pairs and
/// `a_nv` valid negative pairs.
#[derive(Debug, Clone)]
pub struct MaskSet {
    pub a_p: Array2<u8>,
    pub a_v: Array2<u8>,
    pub a_m: Array2<u8>,
    pub a_pv: Array2<u8>,
    pub a_n: Array2<u8>,
    pub a_nv: Array2<u8>,
}

/// Per-anchor hard distances plus the column index each one was taken from.
/// `idx_*` is `None` when the candidate set was empty (the component is 0).
#[derive(Debug, Clone)]
pub struct LossComponents {
    pub d_ap: Array1<f64>,
    pub d_an: Array1<f64>,
    pub d_am: Array1<f64>,
    pub idx_ap: Vec<Option<usize>>,
    pub idx_an: Vec<Option<usize>>,
    pub idx_am: Vec<Option<usize>>,
}

/// Euclidean distances between all row pairs of `x`. Squared distances are
/// clamped at zero before the square root to absorb round-off; the result is
/// exactly symmetric with a zero diagonal.
pub fn pairwise_distances(x: &Array2<f64>) -> DistanceMatrix {
    let k = x.nrows();
    let gram = x.dot(&x.t());
    let sq: Vec<f64> = (0..k).map(|i| gram[[i, i]]).collect();
    let mut p = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in (i + 1)..k {
            let d2 = (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0);
            let d = d2.sqrt();
            p[[i, j]] = d;
            p[[j, i]] = d;
        }
    }
    DistanceMatrix(p)
}

/// Build the six mask matrices from class labels and validity labels.
pub fn build_masks(y: &[u32], b: &[bool]) -> MaskSet {
    let k = y.len();
    debug_assert_eq!(b.len(), k);
    let mut a_p = Array2::<u8>::zeros((k, k));
    let mut a_v = Array2::<u8>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            a_p[[i, j]] = (y[i] == y[j]) as u8;
            a_v[[i, j]] = (b[i] && b[j]) as u8;
        }
    }
    let a_m = a_v.mapv(|v| 1 - v);
    let a_n = a_p.mapv(|v| 1 - v);
    let mut a_pv = &a_p * &a_v;
    for i in 0..k {
        a_pv[[i, i]] = 0;
    }
    let a_nv = &a_n * &a_v;
    MaskSet {
        a_p,
        a_v,
        a_m,
        a_pv,
        a_n,
        a_nv,
    }
}

/// How the row-wise minimum treats masked-out entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MinMode {
    /// Minimum over the masked candidate set: masked-out entries are pushed
    /// above the row maximum with a sentinel before taking the minimum, so
    /// the nearest *candidate* wins. This realizes the intent of hard-negative
    /// mining and is the default.
    #[default]
    CandidateSet,
    /// The literal Hadamard-product-then-row-minimum, where masked-out zeros
    /// always win the minimum. Kept behind this flag for comparison only.
    LiteralHadamard,
}

/// Extract the three per-anchor distance components: hard valid positive
/// (masked row maximum of `P`), hard valid negative and nearest missing point
/// (masked row minima). All three are zeroed for anchors with `b = false`,
/// and an empty candidate set yields 0 for that anchor. The anchor itself is
/// excluded from its own missing-candidate set.
pub fn loss_components(p: &DistanceMatrix, masks: &MaskSet, b: &[bool]) -> LossComponents {
    loss_components_with_mode(p, masks, b, MinMode::CandidateSet)
}

pub fn loss_components_with_mode(
    p: &DistanceMatrix,
    masks: &MaskSet,
    b: &[bool],
    mode: MinMode,
) -> LossComponents {
    let k = p.0.nrows();
    let mut out = LossComponents {
        d_ap: Array1::zeros(k),
        d_an: Array1::zeros(k),
        d_am: Array1::zeros(k),
        idx_ap: vec![None; k],
        idx_an: vec![None; k],
        idx_am: vec![None; k],
    };
    for i in 0..k {
        if !b[i] {
            continue;
        }
        // Hard positive: Hadamard with A_p^v, then row-wise max.
        let mut best = 0.0f64;
        let mut best_j = None;
        for j in 0..k {
            if masks.a_pv[[i, j]] == 1 {
                let d = p.0[[i, j]];
                if best_j.is_none() || d > best {
                    best = d;
                    best_j = Some(j);
                }
            }
        }
        if let Some(j) = best_j {
            out.d_ap[i] = best;
            out.idx_ap[i] = Some(j);
        }
        let (d_an, idx_an) = masked_row_min(&p.0, &masks.a_nv, i, None, mode);
        out.d_an[i] = d_an;
        out.idx_an[i] = idx_an;
        let (d_am, idx_am) = masked_row_min(&p.0, &masks.a_m, i, Some(i), mode);
        out.d_am[i] = d_am;
        out.idx_am[i] = idx_am;
    }
    out
}

fn masked_row_min(
    p: &Array2<f64>,
    mask: &Array2<u8>,
    i: usize,
    exclude: Option<usize>,
    mode: MinMode,
) -> (f64, Option<usize>) {
    let k = p.ncols();
    match mode {
        MinMode::CandidateSet => {
            let mut best = f64::INFINITY;
            let mut best_j = None;
            for j in 0..k {
                if Some(j) == exclude || mask[[i, j]] == 0 {
                    continue;
                }
                let d = p[[i, j]];
                if best_j.is_none() || d < best {
                    best = d;
                    best_j = Some(j);
                }
            }
            match best_j {
                Some(j) => (best, Some(j)),
                None => (0.0, None),
            }
        }
        MinMode::LiteralHadamard => {
            // min over the full masked product row; masked-out entries are 0.
            let mut best = f64::INFINITY;
            let mut best_j = None;
            for j in 0..k {
                if Some(j) == exclude {
                    continue;
                }
                let d = p[[i, j]] * f64::from(mask[[i, j]]);
                if best_j.is_none() || d < best {
                    best = d;
                    best_j = Some(j);
                }
            }
            match best_j {
                Some(j) if mask[[i, j]] == 1 => (best, Some(j)),
                Some(_) => (best, None),
                None => (0.0, None),
            }
        }
    }
}

/// Dump (P, masks, components) to a delimited text file for test forensics.
pub fn dump_mining_state(
    path: &Path,
    p: &DistanceMatrix,
    masks: &MaskSet,
    comps: &LossComponents,
) -> Result<()> {
    let mut s = String::new();
    let write_f = |s: &mut String, name: &str, m: &Array2<f64>| {
        let _ = writeln!(s, "# {name}");
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
            let _ = writeln!(s, "{}", line.join("\t"));
        }
    };
    let write_u = |s: &mut String, name: &str, m: &Array2<u8>| {
        let _ = writeln!(s, "# {name}");
        for row in m.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", line.join("\t"));
        }
    };
    write_f(&mut s, "P", &p.0);
    write_u(&mut s, "A_p", &masks.a_p);
    write_u(&mut s, "A_v", &masks.a_v);
    write_u(&mut s, "A_m", &masks.a_m);
    write_u(&mut s, "A_pv", &masks.a_pv);
    write_u(&mut s, "A_n", &masks.a_n);
    write_u(&mut s, "A_nv", &masks.a_nv);
    for (name, v) in [
        ("d_ap", &comps.d_ap),
        ("d_an", &comps.d_an),
        ("d_am", &comps.d_am),
    ] {
        let _ = writeln!(s, "# {name}");
        let line: Vec<String> = v.iter().map(|x| format!("{x:.9}")).collect();
        let _ = writeln!(s, "{}", line.join("\t"));
    }
    std::fs::write(path, s)?;
    Ok(())
}
