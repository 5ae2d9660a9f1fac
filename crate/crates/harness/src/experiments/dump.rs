use bdsde::{Paths, Realization};
use serde::Serialize;

use super::{bundle, field, Run, Start};
use crate::error::HarnessError;

#[derive(Serialize)]
struct DumpReport {
    paths: usize,
    steps: usize,
    field_points: usize,
    realization_id: u64,
    paths_round_trip: bool,
    field_round_trip: bool,
}

/// Forward paths and the field realization along them, as CSV and binary
/// containers, with a read-back check of both containers.
pub fn dump_paths(run: &mut Run) -> Result<(), HarnessError> {
    let cfg = run.cfg;
    let g = &cfg.grid;
    let kernel = cfg.kernel()?;
    let coeffs = cfg.coefficients.build();
    let grid = g.time_grid()?;
    let start = match g.spread {
        Some([lo, hi]) => Start::Spread(lo, hi),
        None => Start::Point(g.probes[0]),
    };
    let b = bundle(&coeffs, start, &grid, g.paths, run.seed("paths", 0), false)?;
    let real = field(&kernel, &grid, &[&b], &[], run.seed("field", 0))?;
    run.write("paths.csv", b.to_csv(g.paths.min(1000)).as_bytes())?;
    let pb = b.to_bytes()?;
    let fb = real.to_bytes()?;
    run.write("paths.bin", &pb)?;
    run.write("field.bin", &fb)?;
    let back = Paths::from_bytes(&std::fs::read(run.path("paths.bin"))?)?;
    let paths_round_trip = back == b && back.to_bytes()? == pb;
    let back = Realization::from_bytes(&std::fs::read(run.path("field.bin"))?)?;
    let field_round_trip = back == real && back.to_bytes()? == fb && back.id() == real.id();
    run.flag("paths_container_round_trip", 0.0, 0.0, paths_round_trip, "decoded bundle equals the original");
    run.flag("field_container_round_trip", 0.0, 0.0, field_round_trip, "decoded realization equals the original");
    run.report(&DumpReport {
        paths: g.paths,
        steps: g.steps,
        field_points: (0..real.n_steps()).map(|k| real.step(k).points().len()).sum(),
        realization_id: real.id().0,
        paths_round_trip,
        field_round_trip,
    })
}
