//! M-Delta interconnections of the conditioned loop.
//!
//! The saturation is pulled out as the deadzone `p = q - sat(q)` acting on
//! the commanded input `q = u_c`, so `u_a = q - p` and `p = 0` recovers the
//! linear loop. The deadzone sits in the sector `[0, 1]`.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::antiwindup::ConditionedController;
use crate::error::{Error, Result};
use crate::lti::{StateSpace, UncertaintyWeight};
use crate::model::StaticGain;
use crate::synthesis::to_dynamic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Memoryless nonlinearity inside the sector `[0, 1]`.
    ConeNonlinear,
    /// Stable LTI operator with `||Delta||_inf <= 1`.
    Lti,
}

/// Structure class of a constant scaling block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingClass {
    Full,
    Diagonal,
    ScalarIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaBlock {
    pub kind: BlockKind,
    pub size: usize,
    pub scaling: ScalingClass,
}

impl DeltaBlock {
    /// Repeated-scalar nonlinearity; commutes with any full scaling.
    pub fn cone(size: usize) -> Self {
        Self { kind: BlockKind::ConeNonlinear, size, scaling: ScalingClass::Full }
    }

    /// Unstructured LTI block; only scalar scalings commute with it.
    pub fn lti_full(size: usize) -> Self {
        Self { kind: BlockKind::Lti, size, scaling: ScalingClass::ScalarIdentity }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaStructure {
    pub blocks: Vec<DeltaBlock>,
}

impl DeltaStructure {
    pub fn new(blocks: Vec<DeltaBlock>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(|b| b.size == 0) {
            return Err(Error::domain("delta structure", "needs at least one non-empty block"));
        }
        Ok(Self { blocks })
    }

    pub fn channels(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    /// `(offset, block)` pairs.
    pub fn offsets(&self) -> impl Iterator<Item = (usize, &DeltaBlock)> {
        self.blocks.iter().scan(0, |off, b| {
            let o = *off;
            *off += b.size;
            Some((o, b))
        })
    }

    /// Per-channel `(k, r)` of the loop shift `p = k q + r p_new`.
    fn per_channel(&self, f: impl Fn(BlockKind) -> (f64, f64)) -> (DVector<f64>, DVector<f64>) {
        let n = self.channels();
        let mut k = DVector::zeros(n);
        let mut r = DVector::zeros(n);
        for (off, b) in self.offsets() {
            let (kb, rb) = f(b.kind);
            for i in off..off + b.size {
                k[i] = kb;
                r[i] = rb;
            }
        }
        (k, r)
    }
}

/// LTI part `M` of the loop with the Delta channels pulled out. `ss` maps
/// `p` (Delta outputs) to `q` (Delta inputs), with the whole loop state
/// inside.
#[derive(Debug, Clone, PartialEq)]
pub struct InterconnectionM {
    pub ss: StateSpace,
    pub structure: DeltaStructure,
}

impl InterconnectionM {
    /// Re-centres every cone block so that all blocks are norm-bounded by
    /// one: the deadzone is written `p = q/2 + p_new/2` with
    /// `|p_new| <= |q|`. LTI blocks are already unit-ball bounded.
    pub fn normalized(&self) -> Result<InterconnectionM> {
        let (k, r) = self.structure.per_channel(|kind| match kind {
            BlockKind::ConeNonlinear => (0.5, 0.5),
            BlockKind::Lti => (0.0, 1.0),
        });
        Ok(InterconnectionM { ss: self.ss.loop_shift(&k, &r)?, structure: self.structure.clone() })
    }

    /// Form in which every block is a negative feedback `p = -phi(q)` with
    /// `phi` in the sector `[0, 1]`, which is the convention of the
    /// multiplier LMI. Must be called on a normalized interconnection.
    pub fn sector_form(&self) -> Result<StateSpace> {
        let n = self.structure.channels();
        self.ss.loop_shift(&DVector::from_element(n, 1.0), &DVector::from_element(n, 2.0))
    }
}

struct LoopTerms {
    psi: Matrix2<f64>,
    dg: Matrix2<f64>,
    ac: Matrix2<f64>,
    e: Matrix2<f64>,
    f: Matrix2<f64>,
    c: Matrix2<f64>,
}

fn loop_terms(cc: &ConditionedController, g: &StaticGain) -> Result<LoopTerms> {
    let nc = &cc.nominal;
    let g = g.matrix();
    let dg = nc.d * g;
    let psi = (Matrix2::identity() + dg)
        .try_inverse()
        .ok_or_else(|| Error::Interconnection("I + D G is singular".into()))?;
    let bhd = cc.conditioned_b();
    Ok(LoopTerms { psi, dg, ac: cc.conditioned_a(), e: cc.h - bhd * g, f: -bhd * g, c: nc.c })
}

fn put(m: &mut DMatrix<f64>, r: usize, c: usize, block: &Matrix2<f64>) {
    m.fixed_view_mut::<2, 2>(r, c).copy_from(block);
}

/// Saturation-only loop with the reference set to zero.
pub fn build_m_sat(cc: &ConditionedController, g: &StaticGain) -> Result<InterconnectionM> {
    let t = loop_terms(cc, g)?;
    let i = Matrix2::identity();
    let a = t.ac + t.e * t.psi * t.c;
    let b = t.e * (t.psi * t.dg - i);
    let ss = StateSpace::new(to_dynamic(&a), to_dynamic(&b), to_dynamic(&(t.psi * t.c)), to_dynamic(&(t.psi * t.dg)))?;
    Ok(InterconnectionM { ss, structure: DeltaStructure::new(vec![DeltaBlock::cone(2)])? })
}

/// Saturation plus multiplicative input uncertainty: the plant sees
/// `u_a + w(s) p_dyn` and `q_dyn = u_a`. States are the two controller
/// states followed by the two weight states; channels are
/// `[sat (2), dyn (2)]`.
pub fn build_m_mixed(cc: &ConditionedController, g: &StaticGain, w: &UncertaintyWeight) -> Result<InterconnectionM> {
    w.validate()?;
    let t = loop_terms(cc, g)?;
    let wr = w.realize();
    let (aw, bw, cw, dw) = (wr.a[(0, 0)], wr.b[(0, 0)], wr.c[(0, 0)], wr.d[(0, 0)]);
    let i = Matrix2::identity();
    let psidg = t.psi * t.dg;

    // q_s = [psi C, -psi DG c_w] z + [psi DG, -psi DG d_w] p ; u_a = q_s - p_s
    let q_z = (t.psi * t.c, -psidg * cw);
    let q_p = (psidg, -psidg * dw);
    let ua_p = (psidg - i, -psidg * dw);

    let mut a = DMatrix::zeros(4, 4);
    put(&mut a, 0, 0, &(t.ac + t.e * q_z.0));
    put(&mut a, 0, 2, &(t.e * q_z.1 + t.f * cw));
    put(&mut a, 2, 2, &(i * aw));
    let mut b = DMatrix::zeros(4, 4);
    put(&mut b, 0, 0, &(t.e * ua_p.0));
    put(&mut b, 0, 2, &(t.e * ua_p.1 + t.f * dw));
    put(&mut b, 2, 2, &(i * bw));
    let mut c = DMatrix::zeros(4, 4);
    put(&mut c, 0, 0, &q_z.0);
    put(&mut c, 0, 2, &q_z.1);
    put(&mut c, 2, 0, &q_z.0);
    put(&mut c, 2, 2, &q_z.1);
    let mut d = DMatrix::zeros(4, 4);
    put(&mut d, 0, 0, &q_p.0);
    put(&mut d, 0, 2, &q_p.1);
    put(&mut d, 2, 0, &ua_p.0);
    put(&mut d, 2, 2, &ua_p.1);

    let structure = DeltaStructure::new(vec![DeltaBlock::cone(2), DeltaBlock::lti_full(2)])?;
    Ok(InterconnectionM { ss: StateSpace::new(a, b, c, d)?, structure })
}
