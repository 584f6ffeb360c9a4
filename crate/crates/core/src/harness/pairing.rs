use std::cmp::Reverse;

use crate::ice::IceCandidate;

/// RFC 8445 pair priority; `controlling` is the controlling agent's
/// candidate priority.
pub fn pair_priority(controlling: u32, controlled: u32) -> u64 {
    let (g, d) = (controlling as u64, controlled as u64);
    (1u64 << 32) * g.min(d) + 2 * g.max(d) + u64::from(g > d)
}

fn is_v6(c: &IceCandidate) -> bool {
    c.address.contains(':')
}

type Ranked<'a> = (u64, Reverse<(String, String)>, &'a IceCandidate, &'a IceCandidate);

/// Highest-priority pair of a local candidate with a signaled remote one
/// on the same transport and address family. Ties go to the pair whose
/// candidate strings sort first.
pub fn select_pair(
    local: &[IceCandidate],
    remote: &[IceCandidate],
    local_is_controlling: bool,
) -> Option<(IceCandidate, IceCandidate)> {
    let mut best: Option<Ranked> = None;
    for l in local {
        for r in remote {
            if l.transport != r.transport || is_v6(l) != is_v6(r) {
                continue;
            }
            let prio = if local_is_controlling {
                pair_priority(l.priority, r.priority)
            } else {
                pair_priority(r.priority, l.priority)
            };
            let key = (prio, Reverse((l.to_string(), r.to_string())));
            if best.as_ref().is_none_or(|b| (b.0, &b.1) < (key.0, &key.1)) {
                best = Some((key.0, key.1, l, r));
            }
        }
    }
    best.map(|(_, _, l, r)| (l.clone(), r.clone()))
}
