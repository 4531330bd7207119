//! Linear first/second-moment transport through the Q1-Q2-CV-Q3-CH section.
//!
//! Coordinates are `(x, x', y, y')` in metres and radians. Every element is an
//! affine map `z -> R z + d`; the beam is carried as a mean vector and a 4x4
//! covariance matrix, so a Gaussian stays Gaussian all the way to the screen.

use nalgebra::{Matrix2, Matrix4, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{BeamParameters, MagnetSettings};

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("invalid element length {0} m")]
    InvalidLength(f64),
    #[error("negative beam variance on the screen ({0})")]
    NegativeVariance(f64),
    #[error("lattice order violated: {0}")]
    Order(String),
}

/// Transverse offset of an element axis or of the screen centre, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Offset {
    pub dx: f64,
    pub dy: f64,
}

impl Offset {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }
}

/// First and second moments of the beam at one longitudinal position.
#[derive(Debug, Clone, PartialEq)]
pub struct TransverseState {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl TransverseState {
    /// Uncorrelated beam: positions in m, slopes in rad, sizes as RMS values.
    pub fn uncorrelated(mean: [f64; 4], rms: [f64; 4]) -> Self {
        let cov = Matrix4::from_diagonal(&Vector4::from_iterator(rms.iter().map(|s| s * s)));
        Self {
            mean: Vector4::from_column_slice(&mean),
            cov,
        }
    }

    pub fn sigma_x(&self) -> f64 {
        self.cov[(0, 0)].max(0.0).sqrt()
    }

    pub fn sigma_y(&self) -> f64 {
        self.cov[(2, 2)].max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Drift,
    Quadrupole,
    HCorrector,
    VCorrector,
    Screen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeElement {
    pub name: String,
    pub kind: ElementKind,
    pub length: f64,
    #[serde(default)]
    pub misalignment: Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    Horizontal,
    Vertical,
}

/// `z -> r * z + d` on the `(x, x', y, y')` phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub r: Matrix4<f64>,
    pub d: Vector4<f64>,
}

impl AffineMap {
    pub fn identity() -> Self {
        Self {
            r: Matrix4::identity(),
            d: Vector4::zeros(),
        }
    }

    pub fn drift(length: f64) -> Result<Self, OpticsError> {
        if !length.is_finite() {
            return Err(OpticsError::NonFinite("drift length"));
        }
        if length < 0.0 {
            return Err(OpticsError::InvalidLength(length));
        }
        let mut r = Matrix4::identity();
        r[(0, 1)] = length;
        r[(2, 3)] = length;
        Ok(Self { r, d: Vector4::zeros() })
    }

    /// The map that applies `self` first and `next` afterwards.
    pub fn then(&self, next: &AffineMap) -> AffineMap {
        AffineMap {
            r: next.r * self.r,
            d: next.r * self.d + next.d,
        }
    }

    pub fn apply_point(&self, z: &Vector4<f64>) -> Vector4<f64> {
        self.r * z + self.d
    }

    pub fn apply(&self, state: &TransverseState) -> TransverseState {
        let cov = self.r * state.cov * self.r.transpose();
        // Keep the covariance exactly symmetric; rounding in the triple product
        // would otherwise leave ~1e-20 asymmetries behind.
        let cov = (cov + cov.transpose()) * 0.5;
        TransverseState {
            mean: self.apply_point(&state.mean),
            cov,
        }
    }

    /// 2x2 block acting on one plane.
    pub fn plane_block(&self, plane: Plane) -> Matrix2<f64> {
        let o = match plane {
            Plane::Horizontal => 0,
            Plane::Vertical => 2,
        };
        Matrix2::new(
            self.r[(o, o)],
            self.r[(o, o + 1)],
            self.r[(o + 1, o)],
            self.r[(o + 1, o + 1)],
        )
    }
}

/// Thick-lens quadrupole; `k1 > 0` focuses horizontally.
///
/// A misaligned magnet is the aligned map conjugated by a frame shift, which
/// leaves a beam travelling exactly on the displaced axis untouched and gives
/// any other beam the feed-down kick `(I - R) * offset`.
pub fn quad_map(k1: f64, length: f64, misalignment: Offset) -> Result<AffineMap, OpticsError> {
    if !k1.is_finite() {
        return Err(OpticsError::NonFinite("k1"));
    }
    if !length.is_finite() || !misalignment.dx.is_finite() || !misalignment.dy.is_finite() {
        return Err(OpticsError::NonFinite("quadrupole geometry"));
    }
    if length <= 0.0 {
        return Err(OpticsError::InvalidLength(length));
    }

    let focusing = |k: f64| {
        let s = k.sqrt();
        let phi = s * length;
        Matrix2::new(phi.cos(), phi.sin() / s, -s * phi.sin(), phi.cos())
    };
    let defocusing = |k: f64| {
        let s = k.sqrt();
        let phi = s * length;
        Matrix2::new(phi.cosh(), phi.sinh() / s, s * phi.sinh(), phi.cosh())
    };
    let drift = Matrix2::new(1.0, length, 0.0, 1.0);

    let (mx, my) = if k1 > 0.0 {
        (focusing(k1), defocusing(k1))
    } else if k1 < 0.0 {
        (defocusing(-k1), focusing(-k1))
    } else {
        (drift, drift)
    };

    let mut r = Matrix4::zeros();
    r.fixed_view_mut::<2, 2>(0, 0).copy_from(&mx);
    r.fixed_view_mut::<2, 2>(2, 2).copy_from(&my);

    let axis = Vector4::new(misalignment.dx, 0.0, misalignment.dy, 0.0);
    let d = (Matrix4::identity() - r) * axis;
    Ok(AffineMap { r, d })
}

/// Thin steering kick. Positive angles move the beam towards +x (CH) or +y (CV).
pub fn corrector_map(angle: f64, plane: Plane) -> Result<AffineMap, OpticsError> {
    if !angle.is_finite() {
        return Err(OpticsError::NonFinite("corrector angle"));
    }
    let mut map = AffineMap::identity();
    match plane {
        Plane::Horizontal => map.d[1] = angle,
        Plane::Vertical => map.d[3] = angle,
    }
    Ok(map)
}

/// Element lengths and spacings of the section, in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub quad_length: f64,
    pub upstream_drift: f64,
    pub q1_to_q2: f64,
    pub q2_to_cv: f64,
    pub cv_to_q3: f64,
    pub q3_to_ch: f64,
    pub ch_to_screen: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            quad_length: 0.122,
            upstream_drift: 0.175,
            q1_to_q2: 0.428,
            q2_to_cv: 0.204,
            cv_to_q3: 0.204,
            q3_to_ch: 0.179,
            ch_to_screen: 1.0,
        }
    }
}

impl Geometry {
    pub fn total_length(&self) -> f64 {
        self.upstream_drift
            + 3.0 * self.quad_length
            + self.q1_to_q2
            + self.q2_to_cv
            + self.cv_to_q3
            + self.q3_to_ch
            + self.ch_to_screen
    }

    pub fn cv_to_screen(&self) -> f64 {
        self.cv_to_q3 + self.quad_length + self.q3_to_ch + self.ch_to_screen
    }

    pub fn ch_to_screen(&self) -> f64 {
        self.ch_to_screen
    }

    fn validate(&self) -> Result<(), OpticsError> {
        let drifts = [
            self.upstream_drift,
            self.q1_to_q2,
            self.q2_to_cv,
            self.cv_to_q3,
            self.q3_to_ch,
            self.ch_to_screen,
        ];
        for v in drifts.iter().chain(std::iter::once(&self.quad_length)) {
            if !v.is_finite() {
                return Err(OpticsError::NonFinite("lattice geometry"));
            }
        }
        if self.quad_length <= 0.0 {
            return Err(OpticsError::InvalidLength(self.quad_length));
        }
        if let Some(bad) = drifts.iter().find(|d| **d < 0.0) {
            return Err(OpticsError::InvalidLength(*bad));
        }
        Ok(())
    }
}

/// The section as an ordered element list. Construction enforces the
/// Q1, Q2, CV, Q3, CH, screen order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    elements: Vec<LatticeElement>,
}

const MAGNET_ORDER: [(&str, ElementKind); 6] = [
    ("Q1", ElementKind::Quadrupole),
    ("Q2", ElementKind::Quadrupole),
    ("CV", ElementKind::VCorrector),
    ("Q3", ElementKind::Quadrupole),
    ("CH", ElementKind::HCorrector),
    ("SCREEN", ElementKind::Screen),
];

impl Lattice {
    pub fn new(geometry: &Geometry, quad_offsets: [Offset; 3], screen_offset: Offset) -> Result<Self, OpticsError> {
        geometry.validate()?;
        let drift = |name: &str, length: f64| LatticeElement {
            name: name.to_string(),
            kind: ElementKind::Drift,
            length,
            misalignment: Offset::default(),
        };
        let quad = |name: &str, offset: Offset| LatticeElement {
            name: name.to_string(),
            kind: ElementKind::Quadrupole,
            length: geometry.quad_length,
            misalignment: offset,
        };
        let thin = |name: &str, kind: ElementKind, offset: Offset| LatticeElement {
            name: name.to_string(),
            kind,
            length: 0.0,
            misalignment: offset,
        };
        let elements = vec![
            drift("D0", geometry.upstream_drift),
            quad("Q1", quad_offsets[0]),
            drift("D1", geometry.q1_to_q2),
            quad("Q2", quad_offsets[1]),
            drift("D2", geometry.q2_to_cv),
            thin("CV", ElementKind::VCorrector, Offset::default()),
            drift("D3", geometry.cv_to_q3),
            quad("Q3", quad_offsets[2]),
            drift("D4", geometry.q3_to_ch),
            thin("CH", ElementKind::HCorrector, Offset::default()),
            drift("D5", geometry.ch_to_screen),
            thin("SCREEN", ElementKind::Screen, screen_offset),
        ];
        Self::from_elements(elements)
    }

    pub fn aligned(geometry: &Geometry) -> Result<Self, OpticsError> {
        Self::new(geometry, [Offset::default(); 3], Offset::default())
    }

    /// Accepts an explicit element list as long as the non-drift elements
    /// appear exactly in the section order.
    pub fn from_elements(elements: Vec<LatticeElement>) -> Result<Self, OpticsError> {
        let magnets: Vec<&LatticeElement> = elements.iter().filter(|e| e.kind != ElementKind::Drift).collect();
        if magnets.len() != MAGNET_ORDER.len() {
            return Err(OpticsError::Order(format!(
                "expected {} non-drift elements, found {}",
                MAGNET_ORDER.len(),
                magnets.len()
            )));
        }
        for (e, (name, kind)) in magnets.iter().zip(MAGNET_ORDER) {
            if e.kind != kind {
                return Err(OpticsError::Order(format!(
                    "{} is a {:?}, expected {:?} ({name})",
                    e.name, e.kind, kind
                )));
            }
        }
        for e in &elements {
            if !e.length.is_finite() {
                return Err(OpticsError::NonFinite("element length"));
            }
            let ok = match e.kind {
                ElementKind::Quadrupole => e.length > 0.0,
                ElementKind::Drift => e.length >= 0.0,
                _ => e.length == 0.0,
            };
            if !ok {
                return Err(OpticsError::InvalidLength(e.length));
            }
        }
        if elements.last().map(|e| e.kind) != Some(ElementKind::Screen) {
            return Err(OpticsError::Order("screen must be the last element".into()));
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[LatticeElement] {
        &self.elements
    }

    pub fn screen_offset(&self) -> Offset {
        self.elements.last().map(|e| e.misalignment).unwrap_or_default()
    }

    /// Full section map for the given magnet settings (entrance to screen).
    pub fn transfer_map(&self, settings: &MagnetSettings) -> Result<AffineMap, OpticsError> {
        let quads = [settings.q1, settings.q2, settings.q3];
        let mut quad_index = 0;
        let mut total = AffineMap::identity();
        for e in &self.elements {
            let map = match e.kind {
                ElementKind::Drift => AffineMap::drift(e.length)?,
                ElementKind::Quadrupole => {
                    let k1 = quads[quad_index];
                    quad_index += 1;
                    quad_map(k1, e.length, e.misalignment)?
                }
                ElementKind::VCorrector => corrector_map(settings.cv, Plane::Vertical)?,
                ElementKind::HCorrector => corrector_map(settings.ch, Plane::Horizontal)?,
                ElementKind::Screen => continue,
            };
            total = total.then(&map);
        }
        Ok(total)
    }
}

/// Beam state at the screen plane. Range checking is the caller's business.
pub fn track(
    lattice: &Lattice,
    settings: &MagnetSettings,
    incoming: &TransverseState,
) -> Result<TransverseState, OpticsError> {
    Ok(lattice.transfer_map(settings)?.apply(incoming))
}

/// Moment readout in millimetres relative to the screen centre.
///
/// Gaussian noise of width `noise_sigma` (m) is added to the two positions only.
pub fn read_screen<R: Rng + ?Sized>(
    state: &TransverseState,
    screen_offset: Offset,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<BeamParameters, OpticsError> {
    let (vx, vy) = (state.cov[(0, 0)], state.cov[(2, 2)]);
    if vx < 0.0 {
        return Err(OpticsError::NegativeVariance(vx));
    }
    if vy < 0.0 {
        return Err(OpticsError::NegativeVariance(vy));
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(OpticsError::NonFinite("noise sigma"));
    }
    let (mut nx, mut ny) = (0.0, 0.0);
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("finite positive width");
        nx = normal.sample(rng);
        ny = normal.sample(rng);
    }
    const MM: f64 = 1e3;
    Ok(BeamParameters {
        mu_x: (state.mean[0] - screen_offset.dx + nx) * MM,
        sigma_x: vx.sqrt() * MM,
        mu_y: (state.mean[2] - screen_offset.dy + ny) * MM,
        sigma_y: vy.sqrt() * MM,
    })
}
