use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reram_core::device::{self, DeviceParams, DeviceState, IntegratorConfig, Polarity};
use reram_core::gates::{GateFamily, GateInput, GateSpec};
use reram_core::network::{run_transient, solve_dc, Element, Netlist, SourceValue, TransientOptions};
use reram_core::stimulus::{Segment, Waveform};

struct Case {
    net: Netlist,
    r: Vec<f64>,
    v: Vec<f64>,
}

fn name(i: usize) -> String {
    if i == 0 {
        "gnd".into()
    } else {
        format!("n{i}")
    }
}

/// Random connected network: a spanning tree plus extra branches, and
/// voltage sources laid along a forest so they never form loops.
fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(2..=6);
    let mut elements = Vec::new();
    let mut devices = 0;
    let mut r = Vec::new();
    let mut branch = |a: usize, b: usize, rng: &mut ChaCha8Rng, elements: &mut Vec<Element>| {
        let ohms = 10f64.powf(rng.random_range(2.0..6.0));
        if rng.random_bool(0.5) {
            elements.push(Element::Memristor {
                device: devices,
                pos: name(a),
                neg: name(b),
                polarity: Polarity::Forward,
            });
            devices += 1;
            r.push(ohms);
        } else {
            elements.push(Element::Resistor { ohms, pos: name(a), neg: name(b) });
        }
    };
    for i in 1..n {
        let j = rng.random_range(0..i);
        branch(i, j, rng, &mut elements);
    }
    for _ in 0..rng.random_range(0..4) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            branch(a, b, rng, &mut elements);
        }
    }
    let mut v = Vec::new();
    let n_src = rng.random_range(1..=(n - 1).min(3));
    for k in 1..=n_src {
        let neg = rng.random_range(0..k);
        let value = rng.random_range(-2.0..2.0);
        elements.push(Element::Vsource { value: SourceValue::Constant(value), pos: name(k), neg: name(neg) });
        v.push(value);
    }
    let net = Netlist::new((0..n).map(name).collect(), "gnd", elements).unwrap();
    Case { net, r, v }
}

/// Modified nodal analysis assembled independently and solved with LU.
fn oracle(c: &Case) -> Vec<f64> {
    let nodes = c.net.nodes();
    let idx = |s: &str| nodes.iter().position(|x| x == s).unwrap();
    let n = nodes.len() - 1;
    let m = c.net.source_count();
    let mut a = DMatrix::<f64>::zeros(n + m, n + m);
    let mut b = DVector::<f64>::zeros(n + m);
    let mut k = 0;
    for e in c.net.elements() {
        let (g, p, q) = match e {
            Element::Memristor { device, pos, neg, .. } => (1.0 / c.r[*device], idx(pos), idx(neg)),
            Element::Resistor { ohms, pos, neg } => (1.0 / ohms, idx(pos), idx(neg)),
            Element::Vsource { pos, neg, .. } => {
                let (p, q) = (idx(pos), idx(neg));
                if p > 0 {
                    a[(p - 1, n + k)] = 1.0;
                    a[(n + k, p - 1)] = 1.0;
                }
                if q > 0 {
                    a[(q - 1, n + k)] = -1.0;
                    a[(n + k, q - 1)] = -1.0;
                }
                b[n + k] = c.v[k];
                k += 1;
                continue;
            }
        };
        for (x, y, s) in [(p, p, g), (q, q, g), (p, q, -g), (q, p, -g)] {
            if x > 0 && y > 0 {
                a[(x - 1, y - 1)] += s;
            }
        }
    }
    let x = a.lu().solve(&b).expect("oracle system is regular");
    std::iter::once(0.0).chain(x.iter().take(n).copied()).collect()
}

#[test]
fn solve_dc_matches_lu_oracle_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let c = random_case(&mut rng);
        let got = solve_dc(&c.net, &c.r, &c.v).unwrap().node_voltages;
        let want = oracle(&c);
        let scale = want.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() / scale < 1e-10, "case {trial}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn imply_node_closed_form() {
    let spec = GateSpec::default_for(GateFamily::Imply);
    let net = spec.netlist().unwrap();
    let (rp, rq, rg) = (5e3, 545e3, 40e3);
    let sol = solve_dc(&net, &[rp, rq], &[0.4, 0.6]).unwrap();
    let x = net.nodes().iter().position(|n| n == "x").unwrap();
    let (gp, gq, gg) = (1.0 / rp, 1.0 / rq, 1.0 / rg);
    let want = (0.4 * gp + 0.6 * gq) / (gp + gq + gg);
    assert!((sol.node_voltages[x] / want - 1.0).abs() < 1e-12);
}

#[test]
fn magic_common_node_closed_form() {
    let spec = GateSpec::default_for(GateFamily::MagicNor);
    let net = spec.netlist().unwrap();
    let (r, r_out) = (100e3, 7e3);
    let sol = solve_dc(&net, &[r, r, r_out], &[1.0]).unwrap();
    let mid = net.nodes().iter().position(|n| n == "mid").unwrap();
    let want = 1.0 * (2.0 / r) / ((2.0 / r) + 1.0 / r_out);
    assert!((sol.node_voltages[mid] / want - 1.0).abs() < 1e-12);
}

#[test]
fn zero_sources_give_zero_voltages() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let c = random_case(&mut rng);
        let zeros = vec![0.0; c.v.len()];
        assert!(solve_dc(&c.net, &c.r, &zeros).unwrap().node_voltages.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn lone_device_reproduces_device_step() {
    let p = DeviceParams::nominal();
    let wf = Waveform::with_default_sampling(vec![Segment::pulse(0.7, 20e-6), Segment::pulse(-0.9, 20e-6)]).unwrap();
    let net = Netlist::new(
        vec!["gnd".into(), "a".into()],
        "gnd",
        vec![
            Element::Vsource { value: SourceValue::Waveform(wf.clone()), pos: "a".into(), neg: "gnd".into() },
            Element::Memristor { device: 0, pos: "a".into(), neg: "gnd".into(), polarity: Polarity::Forward },
        ],
    )
    .unwrap();
    let dt = 100e-9;
    let s0 = DeviceState::hrs(&p, Polarity::Forward);
    let out = run_transient(&net, &[s0], &[p], 40e-6, &TransientOptions::with_dt(dt)).unwrap();
    let cfg = IntegratorConfig::default();
    let mut s = s0;
    for k in 0..400 {
        let t = (k as f64 + 0.5) * dt;
        s = device::step(&s, wf.voltage_at(t).unwrap(), dt, &p, &cfg).unwrap().0;
    }
    let got = out.final_states[0];
    assert!((got.w - s.w).abs() <= 1e-12 * p.span());
    assert!((got.theta - s.theta).abs() <= 1e-12 * s.theta.abs());
}

#[test]
fn imply_11_keeps_q_in_place() {
    let spec = GateSpec::default_for(GateFamily::Imply);
    let net = spec.netlist().unwrap();
    let p = DeviceParams::nominal();
    let init = spec.initial_states(GateInput::new(3).unwrap(), &[p, p], &net.polarities());
    let out = run_transient(&net, &init, &[p, p], spec.t_op, &TransientOptions::default()).unwrap();
    let moved = (out.final_states[1].w - init[1].w).abs() / p.span();
    assert!(moved < 0.01, "{moved}");
    // The divider keeps Q below its SET threshold throughout.
    assert!(out.trace.samples.iter().all(|s| s.devices[1].v <= p.v_off));
}

#[test]
fn kcl_holds_on_every_transient_sample() {
    let p = DeviceParams::nominal();
    for f in GateFamily::ALL {
        let spec = GateSpec { t_op: 50e-6, ..GateSpec::default_for(f) };
        let net = spec.netlist().unwrap();
        for input in GateInput::ALL {
            let params = vec![p; f.device_count()];
            let init = spec.initial_states(input, &params, &net.polarities());
            let out = run_transient(&net, &init, &params, spec.t_op, &TransientOptions::default()).unwrap();
            let res = out.trace.max_kcl_residual(&net);
            assert!(res < 1e-9, "{f} {input}: {res}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let c = random_case(&mut rng);
        let params = vec![p; c.r.len()];
        let init: Vec<DeviceState> = (0..c.r.len()).map(|_| DeviceState::new(1.5e-9, Polarity::Forward)).collect();
        let out = run_transient(&c.net, &init, &params, 5e-6, &TransientOptions::default()).unwrap();
        assert!(out.trace.max_kcl_residual(&c.net) < 1e-9);
    }
}

#[test]
fn zero_duration_returns_initial_states() {
    let spec = GateSpec::default_for(GateFamily::Imply);
    let net = spec.netlist().unwrap();
    let p = DeviceParams::nominal();
    let init = spec.initial_states(GateInput::new(0).unwrap(), &[p, p], &net.polarities());
    let out = run_transient(&net, &init, &[p, p], 0.0, &TransientOptions::default()).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.final_states, init);
}

#[test]
fn netlist_round_trips_through_toml_shape() {
    let net = GateSpec::default_for(GateFamily::TmslNor).netlist().unwrap();
    let json = serde_json::to_string(&net).unwrap();
    let back: Netlist = serde_json::from_str(&json).unwrap();
    assert_eq!(back, net);
}
