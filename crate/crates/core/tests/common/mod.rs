#![allow(dead_code)]

use mgmpc::netmodel::{LclParams, Line, Load, NetworkTopology, VscKind, VscSpec, DEFAULT_VIRTUAL_RESISTANCE};
use rand::Rng;

/// Random connected radial network (plus an optional mesh link) of 2..=5
/// buses with 1..=3 VSCs. Roughly one VSC in four is a stiff voltage source.
pub fn random_topology<R: Rng>(rng: &mut R) -> NetworkTopology {
    let nb = rng.random_range(2..=5);
    let buses: Vec<String> = (0..nb).map(|i| format!("b{i}")).collect();
    let omega = 2.0 * std::f64::consts::PI * 50.0;
    let mut lines = Vec::new();
    for i in 1..nb {
        let j = rng.random_range(0..i);
        lines.push(Line {
            from: buses[j].clone(),
            to: buses[i].clone(),
            r: rng.random_range(0.01..0.5),
            l: rng.random_range(1e-5..1e-3),
        });
    }
    if nb > 2 && rng.random_bool(0.3) {
        lines.push(Line {
            from: buses[0].clone(),
            to: buses[nb - 1].clone(),
            r: rng.random_range(0.01..0.5),
            l: rng.random_range(1e-5..1e-3),
        });
    }
    let mut loads = Vec::new();
    for b in &buses {
        if rng.random_bool(0.7) {
            let inductive = rng.random_bool(0.5);
            loads.push(Load {
                bus: b.clone(),
                r: rng.random_range(2.0..50.0),
                l: if inductive { rng.random_range(1e-3..3e-2) } else { 0.0 },
            });
        }
    }
    let nv = rng.random_range(1..=nb.min(3));
    let mut vscs = Vec::new();
    for (k, b) in buses.iter().take(nv).enumerate() {
        let mut lcl = LclParams {
            r_f: rng.random_range(0.05..0.3),
            l_f: rng.random_range(1e-3..5e-3),
            c_f: rng.random_range(1e-4..1e-3),
            r_c: rng.random_range(0.01..0.1),
            l_c: rng.random_range(1e-4..5e-4),
            ..LclParams::standard()
        };
        if rng.random_bool(0.25) {
            lcl.r_c = 0.0;
            lcl.l_c = 0.0;
        }
        vscs.push(VscSpec {
            name: format!("v{k}"),
            bus: b.clone(),
            kind: VscKind::Battery,
            lcl,
        });
    }
    NetworkTopology {
        buses,
        lines,
        loads,
        vscs,
        omega,
        virtual_resistance: DEFAULT_VIRTUAL_RESISTANCE,
    }
}
