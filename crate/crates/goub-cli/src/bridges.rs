//! Bridge zoo: the process each bridge kind rides on.
//!
//! The default bridge uses the configured schedule anchored at the pinned
//! endpoint. The variance-exploding bridge is its vanishing-drift limit (a
//! Brownian bridge, so `brownian` is an alias), realized as a near-zero
//! constant drift over unit time with the diffusion chosen to reach the
//! configured stationary level at the bridge midpoint. The variance-
//! preserving bridge anchors the reversion at the origin with unit
//! stationary variance, keeping the schedule profile.

use goub_core::bridge::Anchor;
use goub_core::error::Result;
use goub_core::schedule::ScheduleGrid;

use crate::config::{BridgeKind, RunConfig};

/// Drift used for the vanishing-drift limit grid.
const VE_THETA: f64 = 1e-8;

pub struct BridgeSetup {
    pub grid: ScheduleGrid,
    pub anchor: Anchor,
}

pub fn build_bridge(config: &RunConfig) -> Result<BridgeSetup> {
    match config.bridge {
        BridgeKind::Goub => Ok(BridgeSetup {
            grid: ScheduleGrid::build(
                config.schedule_kind,
                config.steps,
                config.delta,
                config.lambda2,
            )?,
            anchor: Anchor::Endpoint,
        }),
        BridgeKind::Veb | BridgeKind::Brownian => {
            // g^2 T / 4 = lambda2 at the midpoint, with T = 1
            let g2 = 4.0 * config.lambda2;
            let dt = 1.0 / config.steps as f64;
            Ok(BridgeSetup {
                grid: ScheduleGrid::from_theta(
                    vec![VE_THETA; config.steps],
                    dt,
                    g2 / (2.0 * VE_THETA),
                )?,
                anchor: Anchor::Endpoint,
            })
        }
        BridgeKind::Vpb => Ok(BridgeSetup {
            grid: ScheduleGrid::build(config.schedule_kind, config.steps, config.delta, 1.0)?,
            anchor: Anchor::Origin,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use goub_core::bridge::BridgeModel;

    #[test]
    fn veb_matches_brownian_bridge_variance() {
        let config = crate::config::RunConfig::load(None, &["bridge.kind=veb".into()]).unwrap();
        let setup = build_bridge(&config).unwrap();
        let bridge = BridgeModel::new(&setup.grid, setup.anchor);
        let mid = config.steps / 2;
        let c = bridge.marginal_coeffs(mid).unwrap();
        // Brownian-bridge midpoint variance g^2 T / 4 = lambda2
        assert!(((c.var - config.lambda2) / config.lambda2).abs() < 1e-4);
        assert!((c.m - 0.5).abs() < 1e-4);
    }

    #[test]
    fn brownian_is_alias_of_veb() {
        let veb = crate::config::RunConfig::load(None, &["bridge.kind=veb".into()]).unwrap();
        let bb = crate::config::RunConfig::load(None, &["bridge.kind=brownian".into()]).unwrap();
        let a = build_bridge(&veb).unwrap();
        let b = build_bridge(&bb).unwrap();
        assert_eq!(a.grid.dt(), b.grid.dt());
        assert_eq!(a.grid.lambda2(), b.grid.lambda2());
    }

    #[test]
    fn vpb_uses_origin_anchor_unit_variance() {
        let config = crate::config::RunConfig::load(None, &["bridge.kind=vpb".into()]).unwrap();
        let setup = build_bridge(&config).unwrap();
        assert_eq!(setup.anchor, Anchor::Origin);
        assert_eq!(setup.grid.lambda2(), 1.0);
    }
}
