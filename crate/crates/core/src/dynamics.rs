//! Exact event-driven simulation of labeled SIP(m) and IRW particles.
//!
//! Particle `i` at `x` jumps to a neighbor `y` at rate `p(x,y)·(m/2 + η(y))`
//! under the SIP and at rate `p(x,y)·m/2` under independent walks. Summing
//! over the `η(x)` particles at `x` recovers the occupation-level generator
//! rate `η(x) p(x,y) (m/2 + η(y))`.

use crate::error::{Result, SipError};
use crate::lattice::{Direction, Geometry, ParticleList, Site};
use crate::rng::RandomStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessKind {
    Sip,
    Irw,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SipParams<T: Scalar> {
    m: T,
    geometry: Geometry,
    inclusion: bool,
}

impl<T: Scalar> SipParams<T> {
    pub fn new(m: T, geometry: Geometry) -> Result<Self> {
        if !(m > T::zero()) || !m.is_finite() {
            return Err(SipError::Domain(format!("m must be positive, got {m}")));
        }
        Ok(Self {
            m,
            geometry,
            inclusion: true,
        })
    }

    /// Same parameters with the `η(y)` inclusion term switched off.
    pub fn without_inclusion(mut self) -> Self {
        self.inclusion = false;
        self
    }

    pub fn m(&self) -> T {
        self.m
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn inclusion_enabled(&self) -> bool {
        self.inclusion
    }

    /// `p(x,y)` for a neighboring pair.
    pub fn jump_probability(&self) -> T {
        T::of(self.geometry.jump_probability())
    }

    /// Free random-walk rate per (particle, neighbor): `p·m/2`.
    pub fn walk_rate(&self) -> T {
        self.jump_probability() * self.m / T::of(2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<T: Scalar> {
    pub particle: usize,
    pub direction: Direction,
    pub target: Site,
    pub rate: T,
}

pub fn sip_event_rates<T: Scalar>(xi: &ParticleList, params: &SipParams<T>) -> Result<Vec<Event<T>>> {
    let mut out = Vec::new();
    fill_rates(xi, ProcessKind::Sip, params, &mut out)?;
    Ok(out)
}

pub fn irw_event_rates<T: Scalar>(xi: &ParticleList, params: &SipParams<T>) -> Result<Vec<Event<T>>> {
    let mut out = Vec::new();
    fill_rates(xi, ProcessKind::Irw, params, &mut out)?;
    Ok(out)
}

pub fn event_rates<T: Scalar>(
    xi: &ParticleList,
    kind: ProcessKind,
    params: &SipParams<T>,
) -> Result<Vec<Event<T>>> {
    let mut out = Vec::new();
    fill_rates(xi, kind, params, &mut out)?;
    Ok(out)
}

/// Recomputes the full rate list into `out`, particle-major then direction order.
fn fill_rates<T: Scalar>(
    xi: &ParticleList,
    kind: ProcessKind,
    params: &SipParams<T>,
    out: &mut Vec<Event<T>>,
) -> Result<()> {
    out.clear();
    let g = params.geometry();
    let p = params.jump_probability();
    let half_m = params.m() / T::of(2.0);
    let interacting = kind == ProcessKind::Sip && params.inclusion_enabled();
    for (i, x) in xi.positions().iter().enumerate() {
        for dir in g.directions() {
            let target = g.step(x, dir)?;
            let occupied = if interacting {
                T::of_u64(xi.count_at(&target))
            } else {
                T::zero()
            };
            out.push(Event {
                particle: i,
                direction: dir,
                target,
                rate: p * (half_m + occupied),
            });
        }
    }
    Ok(())
}

fn total_rate<T: Scalar>(events: &[Event<T>]) -> T {
    events.iter().fold(T::zero(), |acc, e| acc + e.rate)
}

/// Index of the event selected by `u ∈ [0,1)` proportionally to rates.
fn select<T: Scalar>(events: &[Event<T>], total: T, u: f64) -> usize {
    let target = T::of(u) * total;
    let mut cum = T::zero();
    for (k, e) in events.iter().enumerate() {
        cum += e.rate;
        if target < cum {
            return k;
        }
    }
    // Rounding can leave `target` a hair above the last partial sum.
    events
        .iter()
        .rposition(|e| e.rate > T::zero())
        .unwrap_or(events.len() - 1)
}

/// One jump of the direct method: exponential holding time, then an event
/// chosen with probability proportional to its rate.
pub fn gillespie_step<T: Scalar>(
    xi: &ParticleList,
    events: &[Event<T>],
    stream: &mut RandomStream,
) -> Result<(ParticleList, T)> {
    let total = total_rate(events);
    if events.is_empty() || !(total > T::zero()) {
        return Err(SipError::NoEvents);
    }
    let dt = T::of(stream.exponential(total.as_f64()));
    let k = select(events, total, stream.uniform());
    let mut next = xi.clone();
    next.set_position(events[k].particle, events[k].target.clone());
    Ok((next, dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Record {
    Final,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    /// Event times, strictly increasing; the first entry is 0 under `Record::Full`.
    pub times: Vec<T>,
    pub states: Vec<ParticleList>,
    pub horizon: T,
    pub events: u64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn final_state(&self) -> &ParticleList {
        self.states.last().expect("trajectory holds at least one state")
    }
}

/// Reusable event buffer for advancing a configuration in place.
#[derive(Debug, Default)]
pub struct Engine<T: Scalar> {
    events: Vec<Event<T>>,
}

impl<T: Scalar> Engine<T> {
    pub fn new() -> Self {
        Self { events: Vec::new() }
    }

    /// Advances `xi` by `duration`, calling `on_event(time, state)` after every jump.
    pub fn advance_with(
        &mut self,
        xi: &mut ParticleList,
        kind: ProcessKind,
        params: &SipParams<T>,
        duration: T,
        stream: &mut RandomStream,
        mut on_event: impl FnMut(T, &ParticleList),
    ) -> Result<u64> {
        let n = xi.len();
        let mut t = T::zero();
        let mut count = 0;
        loop {
            fill_rates(xi, kind, params, &mut self.events)?;
            let total = total_rate(&self.events);
            if self.events.is_empty() || !(total > T::zero()) {
                return Ok(count);
            }
            t += T::of(stream.exponential(total.as_f64()));
            if t > duration {
                return Ok(count);
            }
            let e = &self.events[select(&self.events, total, stream.uniform())];
            xi.set_position(e.particle, e.target.clone());
            assert_eq!(xi.len(), n, "particle number changed");
            count += 1;
            on_event(t, xi);
        }
    }

    pub fn advance(
        &mut self,
        xi: &mut ParticleList,
        kind: ProcessKind,
        params: &SipParams<T>,
        duration: T,
        stream: &mut RandomStream,
    ) -> Result<u64> {
        self.advance_with(xi, kind, params, duration, stream, |_, _| {})
    }
}

pub fn simulate<T: Scalar>(
    xi0: &ParticleList,
    kind: ProcessKind,
    params: &SipParams<T>,
    horizon: T,
    stream: &mut RandomStream,
    record: Record,
) -> Result<Trajectory<T>> {
    if !(horizon >= T::zero()) {
        return Err(SipError::Domain(format!("horizon must be >= 0, got {horizon}")));
    }
    let mut state = xi0.clone();
    let mut times = vec![T::zero()];
    let mut states = vec![xi0.clone()];
    let mut engine = Engine::new();
    let events = engine.advance_with(&mut state, kind, params, horizon, stream, |t, xi| {
        if record == Record::Full {
            times.push(t);
            states.push(xi.clone());
        }
    })?;
    if record == Record::Final {
        times = vec![horizon];
        states = vec![state];
    }
    Ok(Trajectory {
        times,
        states,
        horizon,
        events,
    })
}
