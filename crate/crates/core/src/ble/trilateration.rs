//! Brute-force RSSI trilateration, used as a reference for the filter.

use std::collections::BTreeSet;

use rayon::prelude::*;

use super::pathloss::expected_rssi;
use super::{BeaconMap, BleError, RssiObservation};
use crate::geometry::Pose2;

/// Rectangular grid of candidate positions. Nodes sit at
/// `min + i·cell_m` up to and including the last node not beyond `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
    pub cell_m: f64,
}

impl GridSpec {
    fn nodes(&self, lo: f64, hi: f64) -> usize {
        ((hi - lo) / self.cell_m + 1e-9).floor() as usize + 1
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nodes(self.min_x, self.max_x), self.nodes(self.min_y, self.max_y))
    }

    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.min_x + i as f64 * self.cell_m, self.min_y + j as f64 * self.cell_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFix {
    pub x: f64,
    pub y: f64,
    /// Sum of squared RSSI residuals at the fix, dB².
    pub residual: f64,
}

/// Exhaustive least-squares search over `grid`. Ties resolve to the lowest
/// row-major node index, so the parallel evaluation equals a sequential scan.
pub fn trilaterate_grid(
    observations: &[RssiObservation],
    beacons: &BeaconMap,
    receiver_height: f64,
    grid: &GridSpec,
) -> Result<GridFix, BleError> {
    if !(grid.cell_m > 0.0) || !(grid.max_x >= grid.min_x) || !(grid.max_y >= grid.min_y) {
        return Err(BleError::InvalidParams("grid needs cell_m > 0 and max >= min".into()));
    }
    let distinct: BTreeSet<&str> = observations.iter().map(|o| o.beacon_id.as_str()).collect();
    if distinct.len() < 3 {
        return Err(BleError::TooFewBeacons(distinct.len()));
    }
    let pairs = observations
        .iter()
        .map(|o| Ok((beacons.get(&o.beacon_id)?, o.rssi)))
        .collect::<Result<Vec<_>, BleError>>()?;

    let (nx, ny) = grid.shape();
    let residuals: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|k| {
            let (x, y) = grid.node(k % nx, k / nx);
            let pose = Pose2::new(x, y, 0.0);
            pairs
                .iter()
                .map(|(b, rssi)| {
                    let r = rssi - expected_rssi(&pose, b, receiver_height);
                    r * r
                })
                .sum()
        })
        .collect();
    let (best, residual) =
        residuals.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        );
    let (x, y) = grid.node(best % nx, best / nx);
    Ok(GridFix { x, y, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ble::{Beacon, PathLossParams};
    use nalgebra::Vector3;

    fn beacons() -> BeaconMap {
        let pos = [(0.0, 0.0), (10.0, 0.0), (10.0, 8.0), (0.0, 8.0)];
        BeaconMap::new(
            pos.iter()
                .enumerate()
                .map(|(i, (x, y))| Beacon {
                    id: format!("b{i}"),
                    position: Vector3::new(*x, *y, 2.5),
                    path_loss: PathLossParams::default(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn observe(map: &BeaconMap, x: f64, y: f64) -> Vec<RssiObservation> {
        map.iter()
            .map(|b| RssiObservation {
                beacon_id: b.id.clone(),
                rssi: expected_rssi(&Pose2::new(x, y, 0.0), b, 0.3),
                timestamp: 0.0,
            })
            .collect()
    }

    const GRID: GridSpec = GridSpec {
        min_x: 0.0,
        max_x: 10.0,
        min_y: 0.0,
        max_y: 8.0,
        cell_m: 0.25,
    };

    #[test]
    fn recovers_generator_on_grid() {
        let map = beacons();
        let fix = trilaterate_grid(&observe(&map, 3.25, 5.5), &map, 0.3, &GRID).unwrap();
        assert_eq!((fix.x, fix.y), (3.25, 5.5));
        assert!(fix.residual < 1e-20);
    }

    #[test]
    fn off_grid_within_cell_diagonal() {
        let map = beacons();
        let (x, y) = (6.13, 2.91);
        let fix = trilaterate_grid(&observe(&map, x, y), &map, 0.3, &GRID).unwrap();
        assert!((fix.x - x).hypot(fix.y - y) <= GRID.cell_m * 2f64.sqrt());
    }

    #[test]
    fn needs_three_distinct_beacons() {
        let map = beacons();
        let mut obs = observe(&map, 1.0, 1.0);
        obs.truncate(2);
        obs.push(obs[0].clone());
        assert!(matches!(
            trilaterate_grid(&obs, &map, 0.3, &GRID),
            Err(BleError::TooFewBeacons(2))
        ));
    }

    #[test]
    fn grid_shape_includes_bounds() {
        assert_eq!(GRID.shape(), (41, 33));
        assert_eq!(GRID.node(40, 32), (10.0, 8.0));
    }
}
