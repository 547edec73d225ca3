//! Minkowski geometry in a single inertial frame with `c = 1`.
//!
//! Events carry four coordinates `(t, x, y, z)` with metric signature `+---`.
//! Light cones and output regions are closed: an event exactly on the cone
//! belongs to it, so messages sent at the speed of light are legal.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Squared intervals below this magnitude are classified as lightlike.
pub const LIGHTLIKE_TOL: f64 = 1e-12;

/// Slack used when testing coordinate inequalities (slab bounds, coincidence).
pub const COORD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpacetimeError {
    #[error("non-finite coordinate in event {0}")]
    NonFinite(String),
    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("bit count n must be at least 1")]
    EmptyProtocol,
    #[error("events {0} and {1} are timelike related")]
    TimelikeInputs(Event, Event),
}

/// A point of Minkowski spacetime in the laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Result<Self, SpacetimeError> {
        let e = Event { t, x, y, z };
        if [t, x, y, z].iter().all(|c| c.is_finite()) {
            Ok(e)
        } else {
            Err(SpacetimeError::NonFinite(format!("({t}, {x}, {y}, {z})")))
        }
    }

    /// Event on the x axis. Callers pass finite values.
    pub const fn on_axis(t: f64, x: f64) -> Self {
        Event { t, x, y: 0.0, z: 0.0 }
    }

    pub const fn origin() -> Self {
        Event::on_axis(0.0, 0.0)
    }

    pub fn spatial_distance(&self, other: &Event) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn same_place(&self, other: &Event) -> bool {
        self.spatial_distance(other) <= COORD_TOL
    }

    pub fn approx_eq(&self, other: &Event) -> bool {
        (self.t - other.t).abs() <= COORD_TOL && self.same_place(other)
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.t, self.x, self.y, self.z)
    }
}

/// Causal relation of `b` as seen from `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CausalRelation {
    Coincident,
    TimelikeFuture,
    TimelikePast,
    LightlikeFuture,
    LightlikePast,
    Spacelike,
}

impl CausalRelation {
    /// The relation of `a` as seen from `b`.
    pub fn inverse(self) -> Self {
        use CausalRelation::*;
        match self {
            Coincident => Coincident,
            TimelikeFuture => TimelikePast,
            TimelikePast => TimelikeFuture,
            LightlikeFuture => LightlikePast,
            LightlikePast => LightlikeFuture,
            Spacelike => Spacelike,
        }
    }

    /// `b` lies in the closed future light cone of `a`.
    pub fn is_causal_future(self) -> bool {
        matches!(self, CausalRelation::Coincident | CausalRelation::TimelikeFuture | CausalRelation::LightlikeFuture)
    }
}

/// `(Δt)² − (Δx)² − (Δy)² − (Δz)²`.
pub fn interval_squared(a: &Event, b: &Event) -> f64 {
    let dt = b.t - a.t;
    let (dx, dy, dz) = (b.x - a.x, b.y - a.y, b.z - a.z);
    dt * dt - dx * dx - dy * dy - dz * dz
}

pub fn causal_relation(a: &Event, b: &Event) -> CausalRelation {
    if a == b {
        return CausalRelation::Coincident;
    }
    let s2 = interval_squared(a, b);
    let dt = b.t - a.t;
    if s2.abs() < LIGHTLIKE_TOL {
        if dt > 0.0 {
            CausalRelation::LightlikeFuture
        } else if dt < 0.0 {
            CausalRelation::LightlikePast
        } else {
            CausalRelation::Spacelike
        }
    } else if s2 > 0.0 {
        if dt > 0.0 {
            CausalRelation::TimelikeFuture
        } else {
            CausalRelation::TimelikePast
        }
    } else {
        CausalRelation::Spacelike
    }
}

/// `b` can be reached from `a` by a signal travelling no faster than light.
pub fn in_future_cone(a: &Event, b: &Event) -> bool {
    causal_relation(a, b).is_causal_future()
}

/// The event with the smallest time coordinate lying in both future light
/// cones. For two simultaneous events this is the spatial midpoint, half the
/// separation later.
pub fn earliest_common_future(q0: &Event, q1: &Event) -> Result<Event, SpacetimeError> {
    match causal_relation(q0, q1) {
        CausalRelation::Coincident => return Ok(*q0),
        CausalRelation::TimelikeFuture | CausalRelation::TimelikePast => {
            return Err(SpacetimeError::TimelikeInputs(*q0, *q1))
        }
        _ => {}
    }
    let d = q0.spatial_distance(q1);
    let t = 0.5 * (q0.t + q1.t + d);
    // Walk from q0 towards q1 by the light travel time t - q0.t.
    let frac = if d > 0.0 { ((t - q0.t) / d).clamp(0.0, 1.0) } else { 0.0 };
    Ok(Event { t, x: q0.x + frac * (q1.x - q0.x), y: q0.y + frac * (q1.y - q0.y), z: q0.z + frac * (q1.z - q0.z) })
}

/// One of Bob's two output sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Zero,
    One,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Zero, Side::One];

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Side::One
        } else {
            Side::Zero
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Zero => 0,
            Side::One => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Side::Zero => Side::One,
            Side::One => Side::Zero,
        }
    }

    /// `−(−1)^i`: side 0 lies at negative x, side 1 at positive x.
    pub fn sign(self) -> f64 {
        match self {
            Side::Zero => -1.0,
            Side::One => 1.0,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Closed future light cone of `apex` cut off at `apex.t + extent`.
///
/// With `extent = 0` the region degenerates to the apex itself, which is how
/// per-bit output points are represented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputRegion {
    pub apex: Event,
    pub extent: f64,
}

impl OutputRegion {
    /// `R_i`: future cone of `Q_i = (h, −(−1)^i h, 0, 0)` within `h ≤ t ≤ h + v`.
    pub fn main(side: Side, h: f64, v: f64) -> Result<Self, SpacetimeError> {
        positive("h", h)?;
        positive("v", v)?;
        Ok(OutputRegion { apex: Event::on_axis(h, side.sign() * h), extent: v })
    }

    pub fn around(apex: Event, extent: f64) -> Result<Self, SpacetimeError> {
        positive("extent", extent)?;
        Ok(OutputRegion { apex, extent })
    }

    pub fn point(apex: Event) -> Self {
        OutputRegion { apex, extent: 0.0 }
    }

    pub fn contains(&self, e: &Event) -> bool {
        if e.approx_eq(&self.apex) {
            return true;
        }
        e.t >= self.apex.t - COORD_TOL && e.t <= self.apex.t + self.extent + COORD_TOL && in_future_cone(&self.apex, e)
    }

    /// Deterministic sample of events in the region, concentrated on its
    /// boundary where separations from other regions are smallest.
    pub fn samples(&self, time_levels: usize, directions: usize) -> Vec<Event> {
        if self.extent == 0.0 {
            return vec![self.apex];
        }
        let mut out = Vec::with_capacity(time_levels * (directions + 1) * 2);
        for k in 0..time_levels {
            let dt = self.extent * k as f64 / (time_levels - 1).max(1) as f64;
            let t = self.apex.t + dt;
            out.push(Event { t, ..self.apex });
            for m in 0..directions {
                let phi = std::f64::consts::TAU * m as f64 / directions as f64;
                for radius in [dt, 0.5 * dt] {
                    out.push(Event {
                        t,
                        x: self.apex.x + radius * phi.cos(),
                        y: self.apex.y + radius * phi.sin(),
                        z: self.apex.z,
                    });
                }
            }
        }
        out
    }
}

pub fn region_contains(region: &OutputRegion, e: &Event) -> bool {
    region.contains(e)
}

/// Layout of Bob's output regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Layout {
    /// All `n` bits are output in the slab region `R_i`.
    MainSlab { v: f64 },
    /// Bit `j` is output at `Q_i^j = (h + jδ, −(−1)^i h, 0, 0)`; qubit `j` is
    /// handed over at `P_j = (jδ, 0, 0, 0)`.
    PerBitPoints { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolGeometry {
    pub h: f64,
    pub n: usize,
    pub layout: Layout,
}

impl ProtocolGeometry {
    pub fn main_slab(h: f64, v: f64, n: usize) -> Self {
        ProtocolGeometry { h, n, layout: Layout::MainSlab { v } }
    }

    pub fn per_bit(h: f64, delta: f64, n: usize) -> Self {
        ProtocolGeometry { h, n, layout: Layout::PerBitPoints { delta } }
    }

    pub fn is_per_bit(&self) -> bool {
        matches!(self.layout, Layout::PerBitPoints { .. })
    }

    /// Spatial position of the labs: `L = 0`, `L_i = −(−1)^i h`.
    pub fn lab_x(&self, side: Option<Side>) -> f64 {
        side.map_or(0.0, |s| s.sign() * self.h)
    }

    pub fn p(&self) -> Event {
        Event::origin()
    }

    pub fn q(&self, side: Side) -> Event {
        Event::on_axis(self.h, side.sign() * self.h)
    }

    /// Handover time of qubit `j` (all qubits at `t = 0` for the slab layout).
    pub fn handover_time(&self, j: usize) -> f64 {
        match self.layout {
            Layout::MainSlab { .. } => 0.0,
            Layout::PerBitPoints { delta } => j as f64 * delta,
        }
    }

    pub fn p_bit(&self, j: usize) -> Event {
        Event::on_axis(self.handover_time(j), 0.0)
    }

    pub fn q_bit(&self, side: Side, j: usize) -> Event {
        Event::on_axis(self.h + self.handover_time(j), side.sign() * self.h)
    }

    /// Regions in which side `i` must produce its output; one per bit for
    /// the per-bit layout, a single region otherwise.
    pub fn regions(&self, side: Side) -> Result<Vec<OutputRegion>, SpacetimeError> {
        match self.layout {
            Layout::MainSlab { v } => Ok(vec![OutputRegion::main(side, self.h, v)?]),
            Layout::PerBitPoints { .. } => Ok((0..self.n).map(|j| OutputRegion::point(self.q_bit(side, j))).collect()),
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), SpacetimeError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SpacetimeError::NonPositive { name, value })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub passed: bool,
    pub condition: String,
    pub pairs_checked: usize,
    /// Sampled `(e0 ∈ R0, e1 ∈ R1)` pairs that are not spacelike separated.
    pub violations: Vec<(Event, Event)>,
}

const MAX_REPORTED_VIOLATIONS: usize = 16;

/// Pairwise sampling check that every sampled event of `r0` is spacelike
/// from every sampled event of `r1`.
pub fn sample_region_separation(
    r0: &[OutputRegion],
    r1: &[OutputRegion],
    time_levels: usize,
    directions: usize,
) -> (usize, Vec<(Event, Event)>) {
    let s0: Vec<Event> = r0.iter().flat_map(|r| r.samples(time_levels, directions)).collect();
    let s1: Vec<Event> = r1.iter().flat_map(|r| r.samples(time_levels, directions)).collect();
    let mut violations = Vec::new();
    for a in &s0 {
        for b in &s1 {
            if causal_relation(a, b) != CausalRelation::Spacelike && violations.len() < MAX_REPORTED_VIOLATIONS {
                violations.push((*a, *b));
            }
        }
    }
    (s0.len() * s1.len(), violations)
}

/// Checks that the output regions of `g` are spacelike separated.
///
/// Slab layout: passes iff `v < 2h/3`, a sufficient condition (temporal
/// spread inside a region is at most `v`, spatial gap at least `2h − 2v`).
/// Per-bit layout: passes iff `(n − 1)δ < 2h`.
pub fn validate_geometry(g: &ProtocolGeometry) -> Result<GeometryReport, SpacetimeError> {
    positive("h", g.h)?;
    if g.n == 0 {
        return Err(SpacetimeError::EmptyProtocol);
    }
    let (analytic, condition) = match g.layout {
        Layout::MainSlab { v } => {
            positive("v", v)?;
            (v < 2.0 * g.h / 3.0, format!("v < 2h/3 ({v} < {})", 2.0 * g.h / 3.0))
        }
        Layout::PerBitPoints { delta } => {
            positive("delta", delta)?;
            let span = (g.n - 1) as f64 * delta;
            (span < 2.0 * g.h, format!("(n-1)·delta < 2h ({span} < {})", 2.0 * g.h))
        }
    };
    let (pairs_checked, violations) = sample_region_separation(&g.regions(Side::Zero)?, &g.regions(Side::One)?, 12, 10);
    Ok(GeometryReport { passed: analytic && violations.is_empty(), condition, pairs_checked, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: f64, x: f64) -> Event {
        Event::on_axis(t, x)
    }

    #[test]
    fn interval_examples() {
        assert_eq!(interval_squared(&ev(0.0, 0.0), &ev(1.0, 1.0)), 0.0);
        assert_eq!(interval_squared(&ev(0.0, 0.0), &ev(2.0, 0.0)), 4.0);
        assert_eq!(interval_squared(&ev(1.0, -1.0), &ev(1.0, 1.0)), -4.0);
    }

    #[test]
    fn relation_examples() {
        let g = ProtocolGeometry::main_slab(1.0, 0.1, 1);
        assert_eq!(causal_relation(&g.p(), &g.q(Side::Zero)), CausalRelation::LightlikeFuture);
        assert_eq!(causal_relation(&g.q(Side::Zero), &g.q(Side::One)), CausalRelation::Spacelike);
        let a = ev(3.0, 2.0);
        assert_eq!(causal_relation(&a, &a), CausalRelation::Coincident);
        assert_eq!(causal_relation(&ev(0.0, 0.0), &ev(-2.0, 0.5)), CausalRelation::TimelikePast);
    }

    #[test]
    fn rejects_non_finite_events() {
        assert!(Event::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(Event::new(0.0, f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn region_examples() {
        let r0 = OutputRegion::main(Side::Zero, 1.0, 0.1).unwrap();
        assert!(r0.contains(&ev(1.0, -1.0)));
        assert!(r0.contains(&ev(1.05, -1.0)));
        assert!(!r0.contains(&ev(1.0, 1.0)));
        // Inside the slab but outside the cone.
        assert!(!r0.contains(&ev(1.05, -0.9)));
        // Above the slab.
        assert!(!r0.contains(&ev(1.2, -1.0)));
        assert!(OutputRegion::main(Side::Zero, 1.0, 0.0).is_err());
    }

    #[test]
    fn earliest_common_future_examples() {
        assert_eq!(earliest_common_future(&ev(1.0, -1.0), &ev(1.0, 1.0)).unwrap(), ev(2.0, 0.0));
        let a = ev(0.5, 0.3);
        assert_eq!(earliest_common_future(&a, &a).unwrap(), a);
        assert_eq!(earliest_common_future(&ev(0.0, -2.0), &ev(0.0, 2.0)).unwrap(), ev(2.0, 0.0));
        assert!(matches!(
            earliest_common_future(&ev(0.0, 0.0), &ev(5.0, 1.0)),
            Err(SpacetimeError::TimelikeInputs(..))
        ));
    }

    #[test]
    fn geometry_examples() {
        assert!(validate_geometry(&ProtocolGeometry::main_slab(1.0, 0.1, 1)).unwrap().passed);
        let bad = validate_geometry(&ProtocolGeometry::main_slab(1.0, 1.0, 1)).unwrap();
        assert!(!bad.passed);
        assert!(!bad.violations.is_empty());
        assert!(validate_geometry(&ProtocolGeometry::per_bit(1.0, 0.1, 5)).unwrap().passed);
        assert!(!validate_geometry(&ProtocolGeometry::per_bit(1.0, 0.6, 5)).unwrap().passed);
        assert!(validate_geometry(&ProtocolGeometry::main_slab(-1.0, 0.1, 1)).is_err());
        assert!(validate_geometry(&ProtocolGeometry::per_bit(1.0, 0.0, 2)).is_err());
        assert!(validate_geometry(&ProtocolGeometry::main_slab(1.0, 0.1, 0)).is_err());
    }

    #[test]
    fn passing_geometry_is_spacelike_on_dense_grid() {
        let g = ProtocolGeometry::main_slab(1.0, 0.6, 1);
        assert!(validate_geometry(&g).unwrap().passed);
        let (pairs, violations) =
            sample_region_separation(&g.regions(Side::Zero).unwrap(), &g.regions(Side::One).unwrap(), 20, 24);
        assert!(pairs >= 10_000, "only {pairs} pairs");
        assert!(violations.is_empty());
    }

    fn arb_event() -> impl Strategy<Value = Event> {
        (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(t, x, y, z)| Event { t, x, y, z })
    }

    proptest! {
        #[test]
        fn relation_is_antisymmetric(a in arb_event(), b in arb_event()) {
            prop_assert_eq!(causal_relation(&a, &b), causal_relation(&b, &a).inverse());
        }

        #[test]
        fn future_cone_is_transitive(a in arb_event(), b in arb_event(), c in arb_event()) {
            if in_future_cone(&a, &b) && in_future_cone(&b, &c) {
                prop_assert!(in_future_cone(&a, &c));
            }
        }

        #[test]
        fn region_membership_implies_cone(t in 0.9..1.2f64, x in -1.2..-0.8f64, y in -0.2..0.2f64) {
            let r = OutputRegion::main(Side::Zero, 1.0, 0.1).unwrap();
            let e = Event { t, x, y, z: 0.0 };
            if r.contains(&e) {
                prop_assert!(interval_squared(&r.apex, &e) >= -LIGHTLIKE_TOL);
                prop_assert!(e.t >= r.apex.t - COORD_TOL);
            }
        }

        #[test]
        fn earliest_common_future_is_in_both_cones(x0 in -5.0..5.0f64, x1 in -5.0..5.0f64, t in -3.0..3.0f64) {
            let (a, b) = (ev(t, x0), ev(t, x1));
            let q = earliest_common_future(&a, &b).unwrap();
            prop_assert!(in_future_cone(&a, &q) || interval_squared(&a, &q).abs() < 1e-9);
            prop_assert!(in_future_cone(&b, &q) || interval_squared(&b, &q).abs() < 1e-9);
        }
    }
}
