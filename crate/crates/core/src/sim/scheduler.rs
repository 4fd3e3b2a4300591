//! Placement of queued tasks. RAM and disk are hard limits; CPU may be
//! overcommitted and is shared proportionally.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Host, HostId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    /// Lowest CPU demand-to-capacity ratio, ties to the lowest id.
    #[default]
    LeastLoaded,
    /// Uniform over eligible hosts.
    Random,
}

/// Picks an online host with room for `ram`/`disk`, skipping `exclude`.
/// `cpu_load[h]` is the host's summed CPU demand over its capacity.
pub fn choose_host<R: Rng + ?Sized>(
    kind: SchedulerKind,
    hosts: &[Host],
    cpu_load: &[f64],
    ram: f64,
    disk: f64,
    exclude: &[HostId],
    rng: &mut R,
) -> Option<HostId> {
    let eligible = hosts
        .iter()
        .filter(|h| h.online && h.fits(ram, disk) && !exclude.contains(&h.id));
    match kind {
        SchedulerKind::LeastLoaded => eligible
            .min_by(|a, b| cpu_load[a.id.0].total_cmp(&cpu_load[b.id.0]).then(a.id.cmp(&b.id)))
            .map(|h| h.id),
        SchedulerKind::Random => {
            let ids: Vec<HostId> = eligible.map(|h| h.id).collect();
            (!ids.is_empty()).then(|| ids[rng.random_range(0..ids.len())])
        }
    }
}
