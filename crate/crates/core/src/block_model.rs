//! Block grid, precedence structure, material zoning, destinations and the
//! deterministic operational-state transition.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance for tonnage comparisons.
const TONNE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Sulfide,
    Transition,
    Oxide,
}

impl Zone {
    pub fn as_str(self) -> &'static str {
        match self {
            Zone::Sulfide => "sulfide",
            Zone::Transition => "transition",
            Zone::Oxide => "oxide",
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Zone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sulfide" => Ok(Zone::Sulfide),
            "transition" => Ok(Zone::Transition),
            "oxide" => Ok(Zone::Oxide),
            other => Err(Error::Parse(format!("unknown zone `{other}`"))),
        }
    }
}

/// Processing and disposal options. Enum order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    SulfideMill,
    SulfideHeapLeach,
    TransitionHeapLeach,
    OxideHeapLeach,
    SulfideWasteDump,
    OxideWasteDump,
}

pub const N_DESTINATIONS: usize = 6;

impl Destination {
    pub const ALL: [Destination; N_DESTINATIONS] = [
        Destination::SulfideMill,
        Destination::SulfideHeapLeach,
        Destination::TransitionHeapLeach,
        Destination::OxideHeapLeach,
        Destination::SulfideWasteDump,
        Destination::OxideWasteDump,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Destination {
        Destination::ALL[i]
    }

    pub fn is_waste(self) -> bool {
        matches!(
            self,
            Destination::SulfideWasteDump | Destination::OxideWasteDump
        )
    }

    /// Destinations that may receive material of `zone`.
    pub fn compatible(zone: Zone) -> &'static [Destination] {
        match zone {
            Zone::Sulfide => &[
                Destination::SulfideMill,
                Destination::SulfideHeapLeach,
                Destination::SulfideWasteDump,
            ],
            Zone::Transition => &[
                Destination::TransitionHeapLeach,
                Destination::SulfideWasteDump,
            ],
            Zone::Oxide => &[Destination::OxideHeapLeach, Destination::OxideWasteDump],
        }
    }

    pub fn accepts(self, zone: Zone) -> bool {
        Destination::compatible(zone).contains(&self)
    }

    pub fn waste_for(zone: Zone) -> Destination {
        match zone {
            Zone::Sulfide | Zone::Transition => Destination::SulfideWasteDump,
            Zone::Oxide => Destination::OxideWasteDump,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Destination::SulfideMill => "sulfide_mill",
            Destination::SulfideHeapLeach => "sulfide_heap_leach",
            Destination::TransitionHeapLeach => "transition_heap_leach",
            Destination::OxideHeapLeach => "oxide_heap_leach",
            Destination::SulfideWasteDump => "sulfide_waste_dump",
            Destination::OxideWasteDump => "oxide_waste_dump",
        }
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Destination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Destination::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown destination `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    pub ix: usize,
    pub iy: usize,
    /// Layer index, 0 at surface.
    pub iz: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub tonnes: f64,
    pub zone: Zone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        GridDims { nx, ny, nz }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major id with x fastest, then y, then depth.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nx * (iy + self.ny * iz)
    }

    pub fn position(&self, id: usize) -> (usize, usize, usize) {
        let ix = id % self.nx;
        let iy = (id / self.nx) % self.ny;
        let iz = id / (self.nx * self.ny);
        (ix, iy, iz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecedencePattern {
    /// Full 3x3 stencil in the layer above.
    #[default]
    Nine,
    /// Orthogonal cross in the layer above.
    Five,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecedenceGraph {
    predecessors: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
}

impl PrecedenceGraph {
    /// Builds a graph from explicit predecessor lists.
    pub fn from_predecessors(predecessors: Vec<Vec<usize>>) -> Self {
        let mut successors = vec![Vec::new(); predecessors.len()];
        for (b, preds) in predecessors.iter().enumerate() {
            for &p in preds {
                successors[p].push(b);
            }
        }
        PrecedenceGraph {
            predecessors,
            successors,
        }
    }

    pub fn predecessors(&self, block: usize) -> &[usize] {
        &self.predecessors[block]
    }

    pub fn successors(&self, block: usize) -> &[usize] {
        &self.successors[block]
    }

    pub fn len(&self) -> usize {
        self.predecessors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predecessors.is_empty()
    }
}

pub fn build_precedence(dims: GridDims, pattern: PrecedencePattern) -> PrecedenceGraph {
    let mut preds = vec![Vec::new(); dims.len()];
    for iz in 1..dims.nz {
        for iy in 0..dims.ny {
            for ix in 0..dims.nx {
                let id = dims.index(ix, iy, iz);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if pattern == PrecedencePattern::Five && dx != 0 && dy != 0 {
                            continue;
                        }
                        let (px, py) = (ix as i64 + dx, iy as i64 + dy);
                        if px < 0 || py < 0 || px >= dims.nx as i64 || py >= dims.ny as i64 {
                            continue;
                        }
                        preds[id].push(dims.index(px as usize, py as usize, iz - 1));
                    }
                }
                preds[id].sort_unstable();
            }
        }
    }
    PrecedenceGraph::from_predecessors(preds)
}

/// Per-period limits. `None` means unlimited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodCapacities {
    pub mining: f64,
    pub dest: [Option<f64>; N_DESTINATIONS],
}

impl PeriodCapacities {
    /// Mining, mill and sulfide heap leach limits in tonnes; all other
    /// destinations unlimited.
    pub fn new(mining: f64, mill: f64, sulfide_heap_leach: f64) -> Self {
        let mut dest = [None; N_DESTINATIONS];
        dest[Destination::SulfideMill.index()] = Some(mill);
        dest[Destination::SulfideHeapLeach.index()] = Some(sulfide_heap_leach);
        PeriodCapacities { mining, dest }
    }

    pub fn limit(&self, d: Destination) -> f64 {
        self.dest[d.index()].unwrap_or(f64::INFINITY)
    }

    fn fresh(&self) -> [f64; N_DESTINATIONS] {
        let mut out = [f64::INFINITY; N_DESTINATIONS];
        for d in Destination::ALL {
            out[d.index()] = self.limit(d);
        }
        out
    }
}

/// Period clock and remaining capacities, without the mined set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityCursor {
    pub period: u32,
    pub remaining_mining: f64,
    pub remaining_dest: [f64; N_DESTINATIONS],
}

impl CapacityCursor {
    pub fn start(caps: &PeriodCapacities, period: u32) -> Self {
        CapacityCursor {
            period,
            remaining_mining: caps.mining,
            remaining_dest: caps.fresh(),
        }
    }

    fn open_next_period(&mut self, caps: &PeriodCapacities) {
        *self = CapacityCursor::start(caps, self.period + 1);
    }

    /// The cursor a block of `tonnes` would be extracted under: the current
    /// period, or the next one if the block no longer fits.
    fn staged(&self, caps: &PeriodCapacities, tonnes: f64) -> CapacityCursor {
        let mut c = *self;
        if tonnes > c.remaining_mining + TONNE_EPS {
            c.open_next_period(caps);
        }
        c
    }

    /// Whether `dest` can take `tonnes` in the period the block would be
    /// extracted in.
    pub fn admits(&self, caps: &PeriodCapacities, tonnes: f64, dest: Destination) -> bool {
        let c = self.staged(caps, tonnes);
        c.remaining_dest[dest.index()] + TONNE_EPS >= tonnes
    }

    /// Charges an extraction and returns the period it happened in.
    pub fn extract(
        &mut self,
        caps: &PeriodCapacities,
        min_tonnes: f64,
        block: usize,
        tonnes: f64,
        dest: Destination,
    ) -> Result<u32> {
        let mut c = self.staged(caps, tonnes);
        let slot = &mut c.remaining_dest[dest.index()];
        if *slot + TONNE_EPS < tonnes {
            return Err(Error::Capacity {
                block,
                dest,
                period: c.period,
                remaining: *slot,
                tonnes,
            });
        }
        if slot.is_finite() {
            *slot = (*slot - tonnes).max(0.0);
        }
        c.remaining_mining = (c.remaining_mining - tonnes).max(0.0);
        let period = c.period;
        if c.remaining_mining + TONNE_EPS < min_tonnes {
            c.open_next_period(caps);
        }
        *self = c;
        Ok(period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub block: usize,
    pub destination: Destination,
}

impl Action {
    pub fn new(block: usize, destination: Destination) -> Self {
        Action { block, destination }
    }
}

/// Parameters for a synthetic deposit's zoning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZoneLayout {
    /// Fraction of layers (from surface) that are oxide.
    pub oxide_fraction: f64,
    /// Fraction of layers below the oxide cap that are transition.
    pub transition_fraction: f64,
    /// Probability that a column's boundary is shifted one layer up or down.
    pub boundary_noise: f64,
}

impl Default for ZoneLayout {
    fn default() -> Self {
        ZoneLayout {
            oxide_fraction: 0.25,
            transition_fraction: 0.25,
            boundary_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockModel {
    dims: GridDims,
    blocks: Vec<Block>,
    graph: PrecedenceGraph,
    capacities: PeriodCapacities,
    min_tonnes: f64,
}

impl BlockModel {
    pub fn new(
        dims: GridDims,
        blocks: Vec<Block>,
        pattern: PrecedencePattern,
        capacities: PeriodCapacities,
    ) -> Result<Self> {
        let graph = build_precedence(dims, pattern);
        Self::with_graph(dims, blocks, graph, capacities)
    }

    pub fn with_graph(
        dims: GridDims,
        blocks: Vec<Block>,
        graph: PrecedenceGraph,
        capacities: PeriodCapacities,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Model("grid has no blocks".into()));
        }
        if blocks.len() != dims.len() || graph.len() != dims.len() {
            return Err(Error::Model(format!(
                "grid {}x{}x{} needs {} blocks, got {}",
                dims.nx,
                dims.ny,
                dims.nz,
                dims.len(),
                blocks.len()
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.id != i {
                return Err(Error::Model(format!("block at row {i} has id {}", b.id)));
            }
            if b.ix >= dims.nx || b.iy >= dims.ny || b.iz >= dims.nz {
                return Err(Error::Model(format!("block {i} lies outside the grid")));
            }
            if dims.index(b.ix, b.iy, b.iz) != i {
                return Err(Error::Model(format!(
                    "block {i} at ({}, {}, {}) does not match its grid index",
                    b.ix, b.iy, b.iz
                )));
            }
            if !(b.tonnes > 0.0 && b.tonnes.is_finite()) {
                return Err(Error::Model(format!("block {i} has tonnes {}", b.tonnes)));
            }
            if b.tonnes > capacities.mining + TONNE_EPS {
                return Err(Error::Model(format!(
                    "block {i} ({} t) exceeds the per-period mining capacity",
                    b.tonnes
                )));
            }
        }
        if !(capacities.mining > 0.0) {
            return Err(Error::Model("mining capacity must be positive".into()));
        }
        // every block must always have somewhere to go
        for b in &blocks {
            if Destination::compatible(b.zone)
                .iter()
                .all(|&d| capacities.dest[d.index()].is_some())
            {
                return Err(Error::Model(format!(
                    "{} material needs at least one destination without a capacity limit",
                    b.zone
                )));
            }
        }
        let min_tonnes = blocks
            .iter()
            .map(|b| b.tonnes)
            .fold(f64::INFINITY, f64::min);
        Ok(BlockModel {
            dims,
            blocks,
            graph,
            capacities,
            min_tonnes,
        })
    }

    /// Regular grid with uniform tonnage and depth-banded zones whose
    /// boundaries are jittered per column.
    pub fn synthetic(
        dims: GridDims,
        block_size: f64,
        tonnes: f64,
        layout: &ZoneLayout,
        pattern: PrecedencePattern,
        capacities: PeriodCapacities,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seed::child_rng(seed, &[seed::tag::ZONES]);
        let oxide_layers = (layout.oxide_fraction * dims.nz as f64).round() as i64;
        let transition_layers = (layout.transition_fraction * dims.nz as f64).round() as i64;
        let shift = |rng: &mut seed::StreamRng| -> i64 {
            if rng.random::<f64>() < layout.boundary_noise {
                if rng.random::<bool>() {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        };
        let mut column_bounds = Vec::with_capacity(dims.nx * dims.ny);
        for _ in 0..dims.nx * dims.ny {
            let oxide_bottom = (oxide_layers + shift(&mut rng)).max(0);
            let transition_bottom =
                (oxide_layers + transition_layers + shift(&mut rng)).max(oxide_bottom);
            column_bounds.push((oxide_bottom, transition_bottom));
        }
        let mut blocks = Vec::with_capacity(dims.len());
        for id in 0..dims.len() {
            let (ix, iy, iz) = dims.position(id);
            let (oxide_bottom, transition_bottom) = column_bounds[ix + dims.nx * iy];
            let depth = iz as i64;
            let zone = if depth < oxide_bottom {
                Zone::Oxide
            } else if depth < transition_bottom {
                Zone::Transition
            } else {
                Zone::Sulfide
            };
            blocks.push(Block {
                id,
                ix,
                iy,
                iz,
                x: (ix as f64 + 0.5) * block_size,
                y: (iy as f64 + 0.5) * block_size,
                z: -(iz as f64 + 0.5) * block_size,
                tonnes,
                zone,
            });
        }
        BlockModel::new(dims, blocks, pattern, capacities)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> &Block {
        &self.blocks[id]
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn graph(&self) -> &PrecedenceGraph {
        &self.graph
    }

    pub fn capacities(&self) -> &PeriodCapacities {
        &self.capacities
    }

    pub fn min_tonnes(&self) -> f64 {
        self.min_tonnes
    }

    pub fn total_tonnes(&self) -> f64 {
        self.blocks.iter().map(|b| b.tonnes).sum()
    }

    /// Unmined blocks whose predecessors are all mined.
    pub fn frontier(&self, state: &OperationalState) -> Vec<usize> {
        (0..self.len())
            .filter(|&b| !state.is_mined(b) && self.precedence_ready(state, b))
            .collect()
    }

    fn precedence_ready(&self, state: &OperationalState, block: usize) -> bool {
        self.graph
            .predecessors(block)
            .iter()
            .all(|&p| state.is_mined(p))
    }

    /// Every (block, destination) pair that can be applied to `state`.
    pub fn feasible_actions(&self, state: &OperationalState) -> Vec<Action> {
        let mut out = Vec::new();
        for b in self.frontier(state) {
            let block = &self.blocks[b];
            for &d in Destination::compatible(block.zone) {
                if state.cursor.admits(&self.capacities, block.tonnes, d) {
                    out.push(Action::new(b, d));
                }
            }
        }
        out
    }

    pub fn check_action(&self, state: &OperationalState, action: Action) -> Result<()> {
        let b = action.block;
        if b >= self.len() {
            return Err(Error::UnknownBlock(b));
        }
        if state.is_mined(b) {
            return Err(Error::AlreadyMined(b));
        }
        let block = &self.blocks[b];
        if !action.destination.accepts(block.zone) {
            return Err(Error::Incompatible {
                block: b,
                zone: block.zone,
                dest: action.destination,
            });
        }
        if let Some(&p) = self
            .graph
            .predecessors(b)
            .iter()
            .find(|&&p| !state.is_mined(p))
        {
            return Err(Error::Precedence {
                block: b,
                predecessor: p,
            });
        }
        Ok(())
    }

    /// Pure transition: returns the successor state and the period the block
    /// was extracted in.
    pub fn transition(
        &self,
        state: &OperationalState,
        action: Action,
    ) -> Result<(OperationalState, u32)> {
        self.check_action(state, action)?;
        let mut next = state.clone();
        let block = &self.blocks[action.block];
        let period = next.cursor.extract(
            &self.capacities,
            self.min_tonnes,
            action.block,
            block.tonnes,
            action.destination,
        )?;
        next.mined[action.block] = true;
        next.n_mined += 1;
        Ok((next, period))
    }

    pub fn apply_action(&self, state: &OperationalState, action: Action) -> Result<OperationalState> {
        self.transition(state, action).map(|(s, _)| s)
    }
}

/// The deterministic part of the system state.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalState {
    mined: Vec<bool>,
    n_mined: usize,
    cursor: CapacityCursor,
}

impl OperationalState {
    pub fn initial(model: &BlockModel) -> Self {
        Self::at_period(model, 0)
    }

    pub fn at_period(model: &BlockModel, period: u32) -> Self {
        OperationalState {
            mined: vec![false; model.len()],
            n_mined: 0,
            cursor: CapacityCursor::start(model.capacities(), period),
        }
    }

    pub fn is_mined(&self, block: usize) -> bool {
        self.mined[block]
    }

    pub fn mined_mask(&self) -> &[bool] {
        &self.mined
    }

    pub fn mined_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.mined
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn n_mined(&self) -> usize {
        self.n_mined
    }

    pub fn n_remaining(&self) -> usize {
        self.mined.len() - self.n_mined
    }

    pub fn period(&self) -> u32 {
        self.cursor.period
    }

    pub fn remaining_mining_capacity(&self) -> f64 {
        self.cursor.remaining_mining
    }

    pub fn remaining_dest_capacity(&self, d: Destination) -> f64 {
        self.cursor.remaining_dest[d.index()]
    }

    pub fn cursor(&self) -> &CapacityCursor {
        &self.cursor
    }
}
