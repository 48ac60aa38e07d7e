//! Deterministic rule table producing the feasible process chains of a part.
//!
//! Every chain is assembled from primary shaping, hole making, threading,
//! finishing and an optional closing deburr. Primary shaping and threading may
//! each offer two alternatives; their product is truncated to the first three
//! chains. Rotational parts are threaded before hole making.

use super::{
    BatchSize, Geometry, Holes, Operation, PartEncoding, ProcessChain, SurfaceFinish, Threads,
    Tolerance,
};

const MAX_ALTERNATIVES: usize = 3;

fn casting(part: &PartEncoding) -> Operation {
    let fine_surface = matches!(
        part.surface_finish,
        SurfaceFinish::Good | SurfaceFinish::Fine
    );
    if part.tolerance == Tolerance::Tight || (part.geometry == Geometry::ThinWalled && fine_surface)
    {
        Operation::InvestmentCasting
    } else {
        Operation::SandCasting
    }
}

/// Primary shaping by geometry and batch size. Casting routes are offered
/// for freeform and thin-walled parts from small batches up, and for
/// prismatic and rotational parts only in large batches.
fn primary_stage(part: &PartEncoding) -> Vec<Vec<Operation>> {
    use Operation::*;
    let machining = match part.geometry {
        Geometry::Rotational => Turning,
        Geometry::Prismatic | Geometry::ThinWalled => Milling,
        Geometry::Freeform => FiveAxisMilling,
    };
    let cast = casting(part);
    let near_net = matches!(part.geometry, Geometry::Freeform | Geometry::ThinWalled);
    match (part.batch_size, near_net) {
        (BatchSize::Single, _) => vec![vec![machining]],
        (BatchSize::Small | BatchSize::Medium, true) => {
            vec![vec![cast, machining], vec![machining]]
        }
        (BatchSize::Large, true) => vec![vec![cast, machining]],
        (BatchSize::Large, false) => vec![vec![machining], vec![cast, machining]],
        (_, false) => vec![vec![machining]],
    }
}

/// Hole making. Cast blanks come with cored large plain holes that only
/// need boring; boring also follows drilling for functional holes and for
/// holes under tighter tolerances (small holes in thin walls excepted).
fn hole_stage(part: &PartEncoding, cast_blank: bool) -> Vec<Operation> {
    use Operation::*;
    let bore = match part.holes {
        Holes::None => return vec![],
        Holes::Small => part.tolerance == Tolerance::Tight && part.geometry != Geometry::ThinWalled,
        Holes::LargePlain => matches!(part.tolerance, Tolerance::Medium | Tolerance::Tight),
        Holes::LargeFunctional => true,
    };
    if cast_blank && part.holes == Holes::LargePlain {
        return vec![Boring];
    }
    if bore {
        vec![Drilling, Boring]
    } else {
        vec![Drilling]
    }
}

fn thread_stage(part: &PartEncoding) -> Vec<Vec<Operation>> {
    if part.external_threads == Threads::No {
        return vec![vec![]];
    }
    let mut alts = Vec::new();
    if matches!(part.holes, Holes::Small | Holes::LargePlain) {
        alts.push(vec![Operation::Tapping]);
    }
    if part.holes != Holes::Small {
        alts.push(vec![Operation::ThreadMilling]);
    }
    alts
}

/// Finishing by surface finish and tolerance, adapted to the geometry:
/// rotational parts are ground instead of polished, freeform surfaces are
/// polished instead of ground, and thin walls are never ground.
fn finishing_stage(part: &PartEncoding) -> Vec<Operation> {
    use Operation::*;
    use SurfaceFinish as F;
    use Tolerance as T;
    let base = match (part.surface_finish, part.tolerance) {
        (F::Fine, _) | (F::Good, T::Medium | T::Tight) | (F::Medium, T::Tight) => {
            vec![Grinding, Polishing]
        }
        (F::Good, _) => vec![Polishing],
        (F::Medium, T::Standard | T::Medium) | (F::Coarse, T::Medium | T::Tight) => vec![Grinding],
        _ => vec![Deburring],
    };
    match part.geometry {
        Geometry::Prismatic => base,
        Geometry::Rotational => match base.as_slice() {
            [Polishing] => vec![Grinding],
            _ => base,
        },
        Geometry::Freeform => match base.as_slice() {
            [Grinding, Polishing] | [Grinding] => vec![Polishing],
            _ => base,
        },
        Geometry::ThinWalled => match base.as_slice() {
            [Grinding, Polishing] => vec![Polishing],
            [Grinding] => vec![Deburring],
            _ => base,
        },
    }
}

/// Shop-floor burr-risk score: the ordinal levels of hole type, tolerance,
/// batch size and surface finish, summed. Ranges over 0..=12.
fn burr_risk(part: &PartEncoding) -> usize {
    part.holes.index()
        + part.tolerance.index()
        + part.batch_size.index()
        + part.surface_finish.index()
}

const BURR_RISK_LIMIT: usize = 6;

/// Feasible process chains of `part`: 1 to 3 chains of length 2 to 8, in
/// rule order. Pure and total over the encoding space.
///
/// Rotational parts are threaded on the lathe directly after turning; all
/// other parts are threaded after hole making. Parts whose burr-risk score
/// reaches the limit end with deburring unless finishing already deburrs.
pub fn plan_feasible_chains(part: &PartEncoding) -> Vec<ProcessChain> {
    let finishing = finishing_stage(part);
    let lathe_threads = part.geometry == Geometry::Rotational;
    let final_deburr =
        burr_risk(part) >= BURR_RISK_LIMIT && !finishing.contains(&Operation::Deburring);
    let mut chains: Vec<ProcessChain> = Vec::with_capacity(MAX_ALTERNATIVES);
    'outer: for primary in primary_stage(part) {
        let cast_blank = primary.len() > 1;
        let holes = hole_stage(part, cast_blank);
        for threading in thread_stage(part) {
            let mut ops = primary.clone();
            if lathe_threads {
                ops.extend(&threading);
                ops.extend(&holes);
            } else {
                ops.extend(&holes);
                ops.extend(&threading);
            }
            ops.extend(&finishing);
            if final_deburr {
                ops.push(Operation::Deburring);
            }
            let chain = ProcessChain::new(ops).expect("rule table emits chains of length 2..=8");
            if !chains.contains(&chain) {
                chains.push(chain);
            }
            if chains.len() == MAX_ALTERNATIVES {
                break 'outer;
            }
        }
    }
    chains
}
