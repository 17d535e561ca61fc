//! Couplings of SIP and IRW particle sets and the two-stage successful coupling.
//!
//! All constructions drive both marginals of a pair from one stream. Stage 1
//! runs each SIP set against an IRW shadow (shared walk jumps, private
//! inclusion jumps) while the shadows share every jump across the two sets.
//! Stage 2 pairs the SIP sets particle by particle under a coordinate-wise
//! Ornstein coupling and gives up on the first intra-set collision.

use std::fmt;
use std::io::{self, Write};

use crate::dynamics::SipParams;
use crate::error::{Result, SipError};
use crate::lattice::{Direction, Geometry, ParticleList, Site};
use crate::rng::{run_replicas, RandomStream};
use crate::stats::{batch_means, proportion, Estimate};

/// True iff two distinct particles of `xi` sit at `ℓ1` distance at most 1.
pub fn collision_check(xi: &ParticleList, geometry: &Geometry) -> bool {
    let p = xi.positions();
    (0..p.len()).any(|i| (i + 1..p.len()).any(|j| geometry.l1_distance(&p[i], &p[j]) <= 1))
}

/// `Σ_i |X_i − Y_i|` for labeled lists of equal length.
pub fn paired_distance(x: &ParticleList, y: &ParticleList, geometry: &Geometry) -> u64 {
    x.paired_l1(y, geometry)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingMode {
    SameJumpIrw,
    OrnsteinIrw,
    OrSipIrw,
    TwoStage { stage: u8, delta: f64, horizon: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPairState {
    pub x: ParticleList,
    pub y: ParticleList,
    pub mode: CouplingMode,
    pub time: f64,
    pub collided: bool,
    pub coupled_at: Option<f64>,
}

impl CoupledPairState {
    pub fn new(x: ParticleList, y: ParticleList, mode: CouplingMode) -> Result<Self> {
        if x.len() != y.len() {
            return Err(SipError::Precondition(format!(
                "paired sets differ in size: {} vs {}",
                x.len(),
                y.len()
            )));
        }
        let coupled_at = (x == y).then_some(0.0);
        Ok(Self {
            x,
            y,
            mode,
            time: 0.0,
            collided: false,
            coupled_at,
        })
    }

    fn expect_mode(&self, mode: CouplingMode) -> Result<()> {
        if self.mode != mode {
            return Err(SipError::Precondition(format!(
                "step needs {mode:?} mode, state is in {:?}",
                self.mode
            )));
        }
        Ok(())
    }

    fn mark_if_equal(&mut self) {
        if self.coupled_at.is_none() && self.x == self.y {
            self.coupled_at = Some(self.time);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CouplingResult {
    Coupled { tau: f64 },
    CollisionAbort { time: f64 },
    HorizonExpired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventClass {
    Walk,
    Inclusion,
    Ornstein,
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventClass::Walk => "walk",
            EventClass::Inclusion => "inclusion",
            EventClass::Ornstein => "ornstein",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleSet {
    XSip,
    XIrw,
    YSip,
    YIrw,
}

impl fmt::Display for ParticleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParticleSet::XSip => "XS",
            ParticleSet::XIrw => "XI",
            ParticleSet::YSip => "YS",
            ParticleSet::YIrw => "YI",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEvent {
    pub time: f64,
    pub set: ParticleSet,
    pub particle: usize,
    pub from: Site,
    pub to: Site,
    pub class: EventClass,
}

/// Event log as CSV: `time,set,particle,from,to,class`.
pub fn write_event_log<W: Write>(events: &[LoggedEvent], mut out: W) -> io::Result<()> {
    let fmt_site = |s: &Site| s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(out, "time,set,particle,from,to,class")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.time,
            e.set,
            e.particle,
            fmt_site(&e.from),
            fmt_site(&e.to),
            e.class
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOutcome {
    pub result: CouplingResult,
    pub walk_jumps: u64,
    pub inclusion_jumps: u64,
    pub collisions: u64,
    /// Number of two-stage attempts spent (1 for a single attempt).
    pub attempts: u32,
    /// Terminal SIP positions of the two sets.
    pub x: ParticleList,
    pub y: ParticleList,
    pub log: Vec<LoggedEvent>,
}

impl CouplingOutcome {
    pub fn succeeded(&self) -> bool {
        matches!(self.result, CouplingResult::Coupled { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingOptions {
    /// Fraction of the horizon given to Stage 2.
    pub delta: f64,
    /// Relabel the second set by a minimum-cost assignment before Stage 2.
    pub optimal_matching: bool,
    pub record_events: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            delta: 0.5,
            optimal_matching: false,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum JumpKind {
    /// Same displacement for particle `i` in every list that takes part.
    Shared,
    InclusionX,
    InclusionY,
    SoloX,
    SoloY,
}

#[derive(Debug, Clone, Copy)]
struct Jump {
    kind: JumpKind,
    particle: usize,
    dir: Direction,
    rate: f64,
}

fn pick(jumps: &[Jump], total: f64, stream: &mut RandomStream) -> Jump {
    let target = stream.uniform() * total;
    let mut acc = 0.0;
    for j in jumps {
        acc += j.rate;
        if target < acc {
            return *j;
        }
    }
    *jumps.last().expect("non-empty jump list")
}

fn inclusion_jumps(
    sip: &ParticleList,
    params: &SipParams<f64>,
    kind: JumpKind,
    out: &mut Vec<Jump>,
) -> Result<()> {
    let g = params.geometry();
    let p = params.jump_probability();
    for i in 0..sip.len() {
        for dir in g.directions() {
            let target = g.step(sip.position(i), dir)?;
            let c = sip.count_at(&target);
            if c > 0 {
                out.push(Jump {
                    kind,
                    particle: i,
                    dir,
                    rate: p * c as f64,
                });
            }
        }
    }
    Ok(())
}

fn walk_jumps(n: usize, params: &SipParams<f64>, out: &mut Vec<Jump>) {
    let w = params.walk_rate();
    for i in 0..n {
        for dir in params.geometry().directions() {
            out.push(Jump {
                kind: JumpKind::Shared,
                particle: i,
                dir,
                rate: w,
            });
        }
    }
}

fn ornstein_jumps(x: &ParticleList, y: &ParticleList, params: &SipParams<f64>, out: &mut Vec<Jump>) {
    let w = params.walk_rate();
    for i in 0..x.len() {
        for dir in params.geometry().directions() {
            if x.position(i)[dir.axis] == y.position(i)[dir.axis] {
                out.push(Jump {
                    kind: JumpKind::Shared,
                    particle: i,
                    dir,
                    rate: w,
                });
            } else {
                for kind in [JumpKind::SoloX, JumpKind::SoloY] {
                    out.push(Jump {
                        kind,
                        particle: i,
                        dir,
                        rate: w,
                    });
                }
            }
        }
    }
}

/// One shared IRW event: the same particle index takes the same step in both sets.
pub fn same_jump_step(state: &mut CoupledPairState, params: &SipParams<f64>, stream: &mut RandomStream) -> Result<f64> {
    state.expect_mode(CouplingMode::SameJumpIrw)?;
    let n = state.x.len();
    if n == 0 {
        return Err(SipError::NoEvents);
    }
    let dirs = 2 * params.geometry().dim();
    let dt = stream.exponential(params.walk_rate() * (n * dirs) as f64);
    let k = stream.below(n * dirs);
    let dir = params.geometry().directions().nth(k % dirs).unwrap();
    state.x.displace(k / dirs, dir, params.geometry())?;
    state.y.displace(k / dirs, dir, params.geometry())?;
    state.time += dt;
    state.mark_if_equal();
    Ok(dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrStep {
    pub dt: f64,
    pub class: EventClass,
    pub particle: usize,
}

/// One event of the SIP/IRW coupling: a shared walk jump of particle `i` in
/// both lists, or an inclusion jump of the SIP particle alone.
pub fn or_coupled_step(
    sip: &mut ParticleList,
    irw: &mut ParticleList,
    params: &SipParams<f64>,
    stream: &mut RandomStream,
) -> Result<OrStep> {
    if sip.len() != irw.len() {
        return Err(SipError::Precondition("SIP and IRW lists differ in size".into()));
    }
    if sip.is_empty() {
        return Err(SipError::NoEvents);
    }
    let mut jumps = Vec::new();
    let (dt, j) = draw_or_event(sip, params, &mut jumps, stream)?;
    let class = apply_or_event(sip, irw, j, params.geometry())?;
    Ok(OrStep {
        dt,
        class,
        particle: j.particle,
    })
}

fn draw_or_event(
    sip: &ParticleList,
    params: &SipParams<f64>,
    jumps: &mut Vec<Jump>,
    stream: &mut RandomStream,
) -> Result<(f64, Jump)> {
    jumps.clear();
    walk_jumps(sip.len(), params, jumps);
    inclusion_jumps(sip, params, JumpKind::InclusionX, jumps)?;
    let total: f64 = jumps.iter().map(|j| j.rate).sum();
    let dt = stream.exponential(total);
    Ok((dt, pick(jumps, total, stream)))
}

fn apply_or_event(sip: &mut ParticleList, irw: &mut ParticleList, j: Jump, g: &Geometry) -> Result<EventClass> {
    sip.displace(j.particle, j.dir, g)?;
    if j.kind == JumpKind::Shared {
        irw.displace(j.particle, j.dir, g)?;
        Ok(EventClass::Walk)
    } else {
        Ok(EventClass::Inclusion)
    }
}

/// One event of the coordinate-wise Ornstein coupling of two IRW sets.
pub fn ornstein_pair_step(
    state: &mut CoupledPairState,
    params: &SipParams<f64>,
    stream: &mut RandomStream,
) -> Result<f64> {
    state.expect_mode(CouplingMode::OrnsteinIrw)?;
    if state.x.is_empty() {
        return Err(SipError::NoEvents);
    }
    let mut jumps = Vec::new();
    ornstein_jumps(&state.x, &state.y, params, &mut jumps);
    let total: f64 = jumps.iter().map(|j| j.rate).sum();
    let dt = stream.exponential(total);
    let j = pick(&jumps, total, stream);
    apply_pair(&mut state.x, &mut state.y, j, params.geometry())?;
    state.time += dt;
    state.mark_if_equal();
    Ok(dt)
}

fn apply_pair(x: &mut ParticleList, y: &mut ParticleList, j: Jump, g: &Geometry) -> Result<()> {
    match j.kind {
        JumpKind::Shared => {
            x.displace(j.particle, j.dir, g)?;
            y.displace(j.particle, j.dir, g)
        }
        JumpKind::SoloX | JumpKind::InclusionX => x.displace(j.particle, j.dir, g),
        JumpKind::SoloY | JumpKind::InclusionY => y.displace(j.particle, j.dir, g),
    }
}

/// Evolves an already merged pair for `duration` under SIP dynamics, every
/// event applied to both sets.
pub fn advance_merged(
    state: &mut CoupledPairState,
    params: &SipParams<f64>,
    duration: f64,
    stream: &mut RandomStream,
) -> Result<()> {
    if state.x != state.y {
        return Err(SipError::Precondition("sets are not merged".into()));
    }
    let end = state.time + duration;
    let mut jumps = Vec::new();
    while !state.x.is_empty() {
        jumps.clear();
        walk_jumps(state.x.len(), params, &mut jumps);
        inclusion_jumps(&state.x, params, JumpKind::InclusionX, &mut jumps)?;
        for j in jumps.iter_mut() {
            j.kind = JumpKind::Shared;
        }
        let total: f64 = jumps.iter().map(|j| j.rate).sum();
        let dt = stream.exponential(total);
        if state.time + dt > end {
            break;
        }
        state.time += dt;
        let j = pick(&jumps, total, stream);
        apply_pair(&mut state.x, &mut state.y, j, params.geometry())?;
    }
    state.time = end;
    Ok(())
}

struct Attempt<'a> {
    params: &'a SipParams<f64>,
    xs: ParticleList,
    xi: ParticleList,
    ys: ParticleList,
    yi: ParticleList,
    time: f64,
    walk: u64,
    inclusion: u64,
    collisions: u64,
    log: Option<Vec<LoggedEvent>>,
    jumps: Vec<Jump>,
}

enum StageEnd {
    Merged,
    Collision,
    Elapsed,
}

impl Attempt<'_> {
    fn record(&mut self, set: ParticleSet, particle: usize, from: Site, class: EventClass) {
        let Some(log) = self.log.as_mut() else {
            return;
        };
        let to = match set {
            ParticleSet::XSip => self.xs.position(particle),
            ParticleSet::XIrw => self.xi.position(particle),
            ParticleSet::YSip => self.ys.position(particle),
            ParticleSet::YIrw => self.yi.position(particle),
        }
        .clone();
        log.push(LoggedEvent {
            time: self.time,
            set,
            particle,
            from,
            to,
            class,
        });
    }

    fn stage_one(&mut self, end: f64, stream: &mut RandomStream) -> Result<StageEnd> {
        let g = *self.params.geometry();
        loop {
            self.jumps.clear();
            walk_jumps(self.xs.len(), self.params, &mut self.jumps);
            inclusion_jumps(&self.xs, self.params, JumpKind::InclusionX, &mut self.jumps)?;
            inclusion_jumps(&self.ys, self.params, JumpKind::InclusionY, &mut self.jumps)?;
            let total: f64 = self.jumps.iter().map(|j| j.rate).sum();
            let dt = stream.exponential(total);
            if self.time + dt > end {
                self.time = end;
                return Ok(StageEnd::Elapsed);
            }
            self.time += dt;
            let j = pick(&self.jumps, total, stream);
            let i = j.particle;
            match j.kind {
                JumpKind::Shared => {
                    self.walk += 1;
                    let old = [
                        self.xs.position(i).clone(),
                        self.xi.position(i).clone(),
                        self.ys.position(i).clone(),
                        self.yi.position(i).clone(),
                    ];
                    self.xs.displace(i, j.dir, &g)?;
                    self.xi.displace(i, j.dir, &g)?;
                    self.ys.displace(i, j.dir, &g)?;
                    self.yi.displace(i, j.dir, &g)?;
                    if self.log.is_some() {
                        let sets = [ParticleSet::XSip, ParticleSet::XIrw, ParticleSet::YSip, ParticleSet::YIrw];
                        for (set, from) in sets.into_iter().zip(old) {
                            self.record(set, i, from, EventClass::Walk);
                        }
                    }
                }
                JumpKind::InclusionX => {
                    self.inclusion += 1;
                    let from = self.xs.position(i).clone();
                    self.xs.displace(i, j.dir, &g)?;
                    self.record(ParticleSet::XSip, i, from, EventClass::Inclusion);
                }
                JumpKind::InclusionY => {
                    self.inclusion += 1;
                    let from = self.ys.position(i).clone();
                    self.ys.displace(i, j.dir, &g)?;
                    self.record(ParticleSet::YSip, i, from, EventClass::Inclusion);
                }
                JumpKind::SoloX | JumpKind::SoloY => unreachable!("no solo jumps in stage one"),
            }
            if self.xs == self.ys {
                return Ok(StageEnd::Merged);
            }
        }
    }

    fn stage_two(&mut self, end: f64, stream: &mut RandomStream) -> Result<StageEnd> {
        let g = *self.params.geometry();
        if self.xs == self.ys {
            return Ok(StageEnd::Merged);
        }
        if self.collided(&g) {
            return Ok(StageEnd::Collision);
        }
        loop {
            self.jumps.clear();
            ornstein_jumps(&self.xs, &self.ys, self.params, &mut self.jumps);
            let total: f64 = self.jumps.iter().map(|j| j.rate).sum();
            let dt = stream.exponential(total);
            if self.time + dt > end {
                self.time = end;
                return Ok(StageEnd::Elapsed);
            }
            self.time += dt;
            let j = pick(&self.jumps, total, stream);
            let i = j.particle;
            self.walk += 1;
            let (fx, fy) = (self.xs.position(i).clone(), self.ys.position(i).clone());
            apply_pair(&mut self.xs, &mut self.ys, j, &g)?;
            if self.log.is_some() {
                if j.kind != JumpKind::SoloY {
                    self.record(ParticleSet::XSip, i, fx, EventClass::Ornstein);
                }
                if j.kind != JumpKind::SoloX {
                    self.record(ParticleSet::YSip, i, fy, EventClass::Ornstein);
                }
            }
            if self.xs == self.ys {
                return Ok(StageEnd::Merged);
            }
            if self.collided(&g) {
                return Ok(StageEnd::Collision);
            }
        }
    }

    fn collided(&mut self, g: &Geometry) -> bool {
        let hit = collision_check(&self.xs, g) || collision_check(&self.ys, g);
        if hit {
            self.collisions += 1;
        }
        hit
    }

    fn finish(self, result: CouplingResult) -> CouplingOutcome {
        CouplingOutcome {
            result,
            walk_jumps: self.walk,
            inclusion_jumps: self.inclusion,
            collisions: self.collisions,
            attempts: 1,
            x: self.xs,
            y: self.ys,
            log: self.log.unwrap_or_default(),
        }
    }
}

/// Permutation `π` minimizing `Σ_i |x_i − y_{π(i)}|`, by exhaustive search.
pub fn min_cost_matching(x: &ParticleList, y: &ParticleList, geometry: &Geometry) -> Vec<usize> {
    let n = x.len();
    let cost: Vec<Vec<u64>> = (0..n)
        .map(|i| (0..n).map(|j| geometry.l1_distance(x.position(i), y.position(j))).collect())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = u64::MAX;
    permute(&mut perm, 0, &cost, &mut best, &mut best_cost);
    best
}

fn permute(perm: &mut [usize], k: usize, cost: &[Vec<u64>], best: &mut Vec<usize>, best_cost: &mut u64) {
    if k == perm.len() {
        let c: u64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < *best_cost {
            *best_cost = c;
            best.copy_from_slice(perm);
        }
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, cost, best, best_cost);
        perm.swap(k, i);
    }
}

/// One two-stage coupling attempt on `[0, horizon]`.
pub fn two_stage_coupling(
    x: &ParticleList,
    y: &ParticleList,
    params: &SipParams<f64>,
    horizon: f64,
    options: &CouplingOptions,
    stream: &mut RandomStream,
) -> Result<CouplingOutcome> {
    if x.len() != y.len() {
        return Err(SipError::Precondition(format!(
            "paired sets differ in size: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SipError::Precondition(format!("horizon must be positive, got {horizon}")));
    }
    if !(options.delta > 0.0 && options.delta < 1.0) {
        return Err(SipError::Domain(format!("δ must lie in (0,1), got {}", options.delta)));
    }
    let mut attempt = Attempt {
        params,
        xs: x.clone(),
        xi: x.clone(),
        ys: y.clone(),
        yi: y.clone(),
        time: 0.0,
        walk: 0,
        inclusion: 0,
        collisions: 0,
        log: options.record_events.then(Vec::new),
        jumps: Vec::new(),
    };
    if x == y {
        return Ok(attempt.finish(CouplingResult::Coupled { tau: 0.0 }));
    }
    let switch = (1.0 - options.delta) * horizon;
    if let StageEnd::Merged = attempt.stage_one(switch, stream)? {
        let tau = attempt.time;
        return Ok(attempt.finish(CouplingResult::Coupled { tau }));
    }
    if options.optimal_matching {
        let perm = min_cost_matching(&attempt.xs, &attempt.ys, params.geometry());
        attempt.ys = ParticleList::new(perm.iter().map(|&j| attempt.ys.position(j).clone()).collect());
    }
    let result = match attempt.stage_two(horizon, stream)? {
        StageEnd::Merged => CouplingResult::Coupled { tau: attempt.time },
        StageEnd::Collision => CouplingResult::CollisionAbort { time: attempt.time },
        StageEnd::Elapsed => CouplingResult::HorizonExpired,
    };
    Ok(attempt.finish(result))
}

/// Repeats two-stage attempts along `schedule`, each failed attempt's terminal
/// positions seeding the next. `τ` in the result is measured from the start
/// of the first attempt.
pub fn iterated_coupling(
    x: &ParticleList,
    y: &ParticleList,
    params: &SipParams<f64>,
    schedule: &[f64],
    options: &CouplingOptions,
    stream: &mut RandomStream,
) -> Result<CouplingOutcome> {
    if schedule.is_empty() {
        return Err(SipError::Precondition("empty horizon schedule".into()));
    }
    let (mut x, mut y) = (x.clone(), y.clone());
    let mut elapsed = 0.0;
    let mut total: Option<CouplingOutcome> = None;
    for (k, &horizon) in schedule.iter().enumerate() {
        let mut out = two_stage_coupling(&x, &y, params, horizon, options, stream)?;
        if let Some(prev) = total.take() {
            out.walk_jumps += prev.walk_jumps;
            out.inclusion_jumps += prev.inclusion_jumps;
            out.collisions += prev.collisions;
            let mut log = prev.log;
            log.extend(out.log.into_iter().map(|mut e| {
                e.time += elapsed;
                e
            }));
            out.log = log;
        }
        out.attempts = k as u32 + 1;
        if let CouplingResult::Coupled { tau } = out.result {
            out.result = CouplingResult::Coupled { tau: elapsed + tau };
            return Ok(out);
        }
        elapsed += match out.result {
            CouplingResult::CollisionAbort { time } => time,
            _ => horizon,
        };
        x = out.x.clone();
        y = out.y.clone();
        total = Some(out);
    }
    let mut out = total.expect("schedule is non-empty");
    out.result = CouplingResult::HorizonExpired;
    Ok(out)
}

/// Doubling schedule `t0, 2 t0, …, 2^k t0`.
pub fn doubling_schedule(t0: f64, doublings: u32) -> Vec<f64> {
    (0..=doublings).map(|k| t0 * 2f64.powi(k as i32)).collect()
}

/// Monte Carlo mean of `Σ_i |X^S_i − X^I_i|` at each time of `grid` for the
/// SIP/IRW coupling started from `x` in both lists.
pub fn sip_irw_distance_profile(
    x: &ParticleList,
    params: &SipParams<f64>,
    grid: &[f64],
    reps: usize,
    seed: u64,
    stream_base: u64,
    workers: usize,
) -> Result<Vec<Estimate>> {
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.iter().any(|&t| !(t >= 0.0)) {
        return Err(SipError::Domain("time grid must be non-negative and sorted".into()));
    }
    let g = *params.geometry();
    let rows = run_replicas(seed, stream_base, reps, workers, |_, stream| -> Result<Vec<f64>> {
        if x.is_empty() {
            return Ok(vec![0.0; grid.len()]);
        }
        let (mut sip, mut irw) = (x.clone(), x.clone());
        let mut jumps = Vec::new();
        let mut time = 0.0;
        let mut out = Vec::with_capacity(grid.len());
        for &t in grid {
            // Waiting times are memoryless, so the clock restarts at each grid time.
            loop {
                let (dt, j) = draw_or_event(&sip, params, &mut jumps, stream)?;
                if time + dt > t {
                    time = t;
                    break;
                }
                time += dt;
                apply_or_event(&mut sip, &mut irw, j, &g)?;
            }
            out.push(paired_distance(&sip, &irw, &g) as f64);
        }
        Ok(out)
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    (0..grid.len())
        .map(|k| batch_means(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionCheck {
    /// `P(τ_a > t)` for the walk started at 0.
    pub lhs: Estimate,
    /// `P(|X_t| ≤ a)`.
    pub rhs: Estimate,
    /// `P(X_t = a)`, the lattice atom separating the two sides.
    pub atom: Estimate,
}

impl ReflectionCheck {
    /// `|lhs − rhs| ≤ 3 √(σ_l² + σ_r²)`.
    pub fn agrees(&self) -> bool {
        (self.lhs.mean - self.rhs.mean).abs()
            <= 3.0 * (self.lhs.stderr.powi(2) + self.rhs.stderr.powi(2)).sqrt()
    }

    /// Same test against `rhs − atom`, which is exact on `Z`.
    pub fn corrected_agrees(&self) -> bool {
        let sigma = (self.lhs.stderr.powi(2) + self.rhs.stderr.powi(2) + self.atom.stderr.powi(2)).sqrt();
        (self.lhs.mean - (self.rhs.mean - self.atom.mean)).abs() <= 3.0 * sigma
    }
}

/// Both sides of the reflection identity for a nearest-neighbor walk on `Z`
/// with total jump rate `rate`.
pub fn reflection_check(
    a: u64,
    t: f64,
    rate: f64,
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<ReflectionCheck> {
    if !(rate > 0.0) || !(t >= 0.0) {
        return Err(SipError::Domain(format!("need rate > 0 and t >= 0, got {rate}, {t}")));
    }
    if reps < 2 {
        return Err(SipError::InsufficientData("need at least 2 replicas".into()));
    }
    let a = a as i64;
    let rows = run_replicas(seed, 0, reps, workers, |_, stream| {
        let (mut x, mut time, mut hit) = (0i64, 0.0, a == 0);
        loop {
            time += stream.exponential(rate);
            if time > t {
                break;
            }
            x += if stream.coin() { 1 } else { -1 };
            hit |= x == a;
        }
        (!hit, x.abs() <= a, x == a)
    });
    let count = |f: fn(&(bool, bool, bool)) -> bool| rows.iter().filter(|r| f(r)).count();
    Ok(ReflectionCheck {
        lhs: proportion(count(|r| r.0), reps),
        rhs: proportion(count(|r| r.1), reps),
        atom: proportion(count(|r| r.2), reps),
    })
}
