//! Geometry, antenna patterns, SINR, rates and collection delay.

use super::params::{NetworkParams, UplinkInterference};
use super::{Position, TiltVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// 3-D distance to the antenna (m).
    pub distance: f64,
    /// Elevation below the antenna, degrees.
    pub vertical: f64,
    /// Bearing from the site, degrees in `[0, 360)`.
    pub horizontal: f64,
}

/// Wraps to `[0, 360)`.
pub fn wrap_bearing(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Wraps to `(-180, 180]`.
pub fn wrap_offset(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w > 180.0 {
        w - 360.0
    } else {
        w
    }
}

pub fn user_geometry(pos: Position, params: &NetworkParams) -> Geometry {
    let r = pos[0].hypot(pos[1]);
    let h = params.bs_height;
    if r == 0.0 {
        return Geometry {
            distance: h,
            vertical: 90.0,
            horizontal: 0.0,
        };
    }
    Geometry {
        distance: (r * r + h * h).sqrt(),
        vertical: (h / r).atan().to_degrees(),
        horizontal: wrap_bearing(pos[1].atan2(pos[0]).to_degrees()),
    }
}

/// Serving cell: nearest azimuth, lowest index on ties.
pub fn associate_bearing(bearing: f64, params: &NetworkParams) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (c, az) in params.azimuths.iter().enumerate() {
        let d = wrap_offset(bearing - az).abs();
        if d < best_dist {
            best = c;
            best_dist = d;
        }
    }
    best
}

pub fn associate(pos: Position, params: &NetworkParams) -> usize {
    associate_bearing(user_geometry(pos, params).horizontal, params)
}

pub fn antenna_gain(vertical: f64, horizontal: f64, tilt: f64, azimuth: f64, params: &NetworkParams) -> f64 {
    let v = (vertical - tilt) / params.vertical_beamwidth;
    let h = wrap_offset(horizontal - azimuth) / params.horizontal_beamwidth;
    10f64.powf(-1.2 * (params.beam_weight_vertical * v * v + params.beam_weight_horizontal * h * h))
}

/// Everything about one user that the link budgets need.
#[derive(Debug, Clone)]
struct Link {
    cell: usize,
    /// `g^U · a · d^-β`, without shadowing or antenna gain.
    path: f64,
    /// Antenna gain toward every cell.
    gains: Vec<f64>,
}

fn link(pos: Position, tilts: &TiltVector, params: &NetworkParams) -> Link {
    let g = user_geometry(pos, params);
    let gains = params
        .azimuths
        .iter()
        .zip(tilts.as_slice())
        .map(|(az, t)| antenna_gain(g.vertical, g.horizontal, *t, *az, params))
        .collect();
    Link {
        cell: associate_bearing(g.horizontal, params),
        path: params.user_gain * params.path_constant * g.distance.powf(-params.path_exponent),
        gains,
    }
}

fn links(positions: &[Position], tilts: &TiltVector, params: &NetworkParams) -> Vec<Link> {
    positions.iter().map(|p| link(*p, tilts, params)).collect()
}

fn downlink_from_link(l: &Link, params: &NetworkParams) -> f64 {
    let base = params.bs_power * params.shadowing * l.path;
    let mut interference = 0.0;
    for (i, g) in l.gains.iter().enumerate() {
        if i != l.cell {
            interference += base * g;
        }
    }
    base * l.gains[l.cell] / (params.noise + interference)
}

pub fn downlink_sinr(u: usize, positions: &[Position], tilts: &TiltVector, params: &NetworkParams) -> f64 {
    downlink_from_link(&link(positions[u], tilts, params), params)
}

/// `W · log2(1 + γ)`; shared by both link directions.
pub fn rate(sinr: f64, params: &NetworkParams) -> f64 {
    params.bandwidth * (1.0 + sinr).log2()
}

pub fn downlink_rate(sinr: f64, params: &NetworkParams) -> f64 {
    rate(sinr, params)
}

pub fn uplink_rate(sinr: f64, params: &NetworkParams) -> f64 {
    rate(sinr, params)
}

/// Active uploader per cell in slot `slot`: the cell's users in index order,
/// served round-robin. `None` for an empty cell.
pub fn round_robin_uploaders(positions: &[Position], slot: u64, params: &NetworkParams) -> Vec<Option<usize>> {
    let cells: Vec<usize> = positions.iter().map(|p| associate(*p, params)).collect();
    uploaders_from_cells(&cells, slot, params.num_cells)
}

fn uploaders_from_cells(cells: &[usize], slot: u64, num_cells: usize) -> Vec<Option<usize>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_cells];
    for (u, c) in cells.iter().enumerate() {
        members[*c].push(u);
    }
    members
        .iter()
        .map(|m| {
            if m.is_empty() {
                None
            } else {
                Some(m[(slot % m.len() as u64) as usize])
            }
        })
        .collect()
}

fn uplink_from_links(u: usize, links: &[Link], uploaders: &[Option<usize>], params: &NetworkParams) -> f64 {
    let me = &links[u];
    let k = params.user_power * params.uplink_shadowing;
    let signal = k * me.gains[me.cell] * me.path;
    let mut interference = 0.0;
    for (i, up) in uploaders.iter().enumerate() {
        let Some(v) = *up else { continue };
        if i == me.cell {
            continue;
        }
        interference += match params.uplink_interference {
            UplinkInterference::ServedUserPath => k * me.gains[i] * me.path,
            UplinkInterference::UploaderPath => k * links[v].gains[i] * links[v].path,
        };
    }
    signal / (params.noise + interference)
}

/// Uplink SINR of user `u` while `uploaders` hold the other cells.
pub fn uplink_sinr(
    u: usize,
    positions: &[Position],
    tilts: &TiltVector,
    uploaders: &[Option<usize>],
    params: &NetworkParams,
) -> f64 {
    uplink_from_links(u, &links(positions, tilts, params), uploaders, params)
}

/// `max_u D / r^U_u` for one slot.
pub fn slot_delay(positions: &[Position], tilts: &TiltVector, slot: u64, params: &NetworkParams) -> f64 {
    let ls = links(positions, tilts, params);
    let cells: Vec<usize> = ls.iter().map(|l| l.cell).collect();
    let uploaders = uploaders_from_cells(&cells, slot, params.num_cells);
    (0..positions.len())
        .map(|u| params.payload / uplink_rate(uplink_from_links(u, &ls, &uploaders, params), params))
        .fold(0.0, f64::max)
}

/// Collection delay of one transition: `slots[n]` holds the positions of slot
/// `first_slot + n`.
pub fn transition_delay(slots: &[Vec<Position>], first_slot: u64, tilts: &TiltVector, params: &NetworkParams) -> f64 {
    slots
        .iter()
        .enumerate()
        .map(|(n, pos)| slot_delay(pos, tilts, first_slot + n as u64, params))
        .sum()
}

pub fn slot_sum_rate(positions: &[Position], tilts: &TiltVector, params: &NetworkParams) -> f64 {
    positions
        .iter()
        .map(|p| downlink_rate(downlink_from_link(&link(*p, tilts, params), params), params))
        .sum()
}

pub fn sum_rate(slots: &[Vec<Position>], tilts: &TiltVector, params: &NetworkParams) -> f64 {
    slots.iter().map(|pos| slot_sum_rate(pos, tilts, params)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> NetworkParams {
        NetworkParams::default()
    }

    fn tilts(v: &[f64]) -> TiltVector {
        TiltVector::new(v.to_vec(), &p()).unwrap()
    }

    #[test]
    fn equal_legs_geometry() {
        let g = user_geometry([25.0, 0.0], &p());
        assert!((g.vertical - 45.0).abs() < 1e-12);
        assert_eq!(g.horizontal, 0.0);
        assert!((g.distance - 25.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn far_user_at_horizon() {
        let g = user_geometry([0.0, 1e9], &p());
        assert!(g.vertical < 1e-5);
        assert!((g.horizontal - 90.0).abs() < 1e-12);
    }

    #[test]
    fn geometry_at_origin() {
        let g = user_geometry([0.0, 0.0], &p());
        assert_eq!((g.vertical, g.horizontal, g.distance), (90.0, 0.0, 25.0));
    }

    #[test]
    fn three_four_geometry() {
        let g = user_geometry([3.0, 4.0], &p());
        assert!((g.distance - 650f64.sqrt()).abs() < 1e-12);
        assert!((g.horizontal - 53.130_102_354_155_98).abs() < 1e-9);
    }

    #[test]
    fn negative_bearings_wrap() {
        let g = user_geometry([1.0, -1.0], &p());
        assert!((g.horizontal - 315.0).abs() < 1e-12);
        assert_eq!(wrap_offset(-180.0), 180.0);
        assert_eq!(wrap_offset(180.0), 180.0);
        assert_eq!(wrap_offset(190.0), -170.0);
    }

    #[test]
    fn association_rules() {
        assert_eq!(associate_bearing(10.0, &p()), 0);
        assert_eq!(associate_bearing(60.0, &p()), 0);
        assert_eq!(associate_bearing(350.0, &p()), 0);
        assert_eq!(associate_bearing(200.0, &p()), 2);
    }

    #[test]
    fn gain_examples() {
        assert_eq!(antenna_gain(20.0, 40.0, 20.0, 40.0, &p()), 1.0);
        let g = antenna_gain(50.0, 0.0, 20.0, 0.0, &p());
        assert!((g - 10f64.powf(-1.2)).abs() < 1e-15);
        // seam: 359 vs 0 is a one-degree offset
        let seam = antenna_gain(0.0, 359.0, 0.0, 0.0, &p());
        let near = antenna_gain(0.0, 1.0, 0.0, 0.0, &p());
        assert!((seam - near).abs() < 1e-15);
    }

    #[test]
    fn single_cell_snr_limit() {
        let params = NetworkParams {
            num_cells: 1,
            azimuths: vec![0.0],
            bs_height: 1.0,
            ..Default::default()
        };
        // user right under the antenna: d = h = 1, vertical 90
        let t = TiltVector::new(vec![90.0], &params).unwrap();
        let g = downlink_sinr(0, &[[0.0, 0.0]], &t, &params);
        assert!((g - 1e6).abs() < 1e-6);
    }

    #[test]
    fn rate_examples() {
        let params = p();
        assert_eq!(downlink_rate(0.0, &params), 0.0);
        assert_eq!(downlink_rate(1.0, &params), 1.0);
        assert!((downlink_rate(1e6, &params) - 19.931_570_012_018_72).abs() < 1e-9);
    }

    #[test]
    fn round_robin_cycles_within_cell() {
        let params = p();
        // users 0 and 2 in cell 0, user 1 in cell 1, cell 2 empty
        let pos = vec![[10.0, 0.0], [-5.0, 8.0], [20.0, 1.0]];
        assert_eq!(round_robin_uploaders(&pos, 0, &params), vec![Some(0), Some(1), None]);
        assert_eq!(round_robin_uploaders(&pos, 1, &params), vec![Some(2), Some(1), None]);
        assert_eq!(round_robin_uploaders(&pos, 2, &params), vec![Some(0), Some(1), None]);
    }

    #[test]
    fn single_user_uplink_is_snr() {
        let params = p();
        let pos = vec![[10.0, 5.0]];
        let t = tilts(&[30.0, 30.0, 30.0]);
        let up = round_robin_uploaders(&pos, 0, &params);
        let g = user_geometry(pos[0], &params);
        let expect = antenna_gain(g.vertical, g.horizontal, 30.0, 0.0, &params) * g.distance.powi(-2) / params.noise;
        let got = uplink_sinr(0, &pos, &t, &up, &params);
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn delay_is_sum_of_slot_terms() {
        let params = p();
        let t = tilts(&[10.0, 40.0, 70.0]);
        let slots = vec![
            vec![[10.0, 0.0], [-5.0, 8.0], [3.0, -20.0]],
            vec![[11.0, 0.0], [-5.0, 9.0], [3.0, -20.0]],
        ];
        let total = transition_delay(&slots, 7, &t, &params);
        let parts = slot_delay(&slots[0], &t, 7, &params) + slot_delay(&slots[1], &t, 8, &params);
        assert_eq!(total, parts);
        assert!(total > 0.0);
    }

    #[test]
    fn sum_rate_linear_in_bandwidth() {
        let params = p();
        let double = NetworkParams {
            bandwidth: 2.0,
            ..p()
        };
        let t = tilts(&[10.0, 40.0, 70.0]);
        let slots = vec![vec![[10.0, 0.0], [-5.0, 8.0]]];
        assert_eq!(2.0 * sum_rate(&slots, &t, &params), sum_rate(&slots, &t, &double));
    }
}
