use std::rc::Rc;

use proptest::collection::vec;
use proptest::prelude::*;
use vton::agnostic::{
    compose_agnostic, mask_occluded_clothes, occlusion_region, support, LabelMaps, LabelTable,
};
use vton::flowtrack::{flow_correct, ridge_smooth, track_sequence, FlowWindow, TrackConfig};
use vton::geometry::{identity_flow, tps_apply, warp_by_flow, FlowField, TpsParams};
use vton::mpdt::{fuse_background, fuse_clothes, patch_attention, PatchSet};
use vton::numcore::{Tape, Tensor};
use vton::objectives::{adam_step, frechet_distance, l1_clothes, l1_whole, AdamConfig, AdamState};
use vton::warpfit::{fit_tps_grid, sdc_loss, sec_count, sec_loss, WarpLossConfig};

fn tensor(shape: &'static [usize], lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    vec(lo..hi, n).prop_map(move |d| Tensor::new(shape.to_vec(), d).unwrap())
}

fn flow(h: usize, w: usize, spread: f64) -> impl Strategy<Value = FlowField> {
    vec(-spread..spread, h * w * 2).prop_map(move |d| {
        let id = identity_flow(h, w);
        let c: Vec<f64> = id
            .coords()
            .data()
            .iter()
            .zip(&d)
            .map(|(a, b)| a + b)
            .collect();
        FlowField::from_flat(h, w, c).unwrap()
    })
}

fn binary(shape: &'static [usize]) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    vec(any::<bool>(), n).prop_map(move |b| {
        Tensor::new(shape.to_vec(), b.iter().map(|&x| x as u8 as f64).collect()).unwrap()
    })
}

fn labels(shape: &'static [usize], n: u32) -> impl Strategy<Value = Tensor> {
    let len: usize = shape.iter().product();
    vec(0..n, len).prop_map(move |v| {
        Tensor::new(shape.to_vec(), v.iter().map(|&x| x as f64).collect()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn reshape_and_permute_round_trip(t in tensor(&[2, 3, 4], -10.0, 10.0)) {
        prop_assert_eq!(t.reshape(&[4, 6]).unwrap().reshape(&[2, 3, 4]).unwrap(), t.clone());
        let p = t.permute(&[1, 2, 0]).unwrap();
        prop_assert_eq!(p.permute(&[2, 0, 1]).unwrap(), t);
    }

    #[test]
    fn softmax_is_a_distribution(t in tensor(&[3, 5], -10.0, 10.0)) {
        let tape = Tape::new();
        let s = tape.constant(t).softmax().value();
        for row in s.data().chunks(5) {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn identity_warp_is_exact(img in tensor(&[5, 6, 3], -1.0, 1.0)) {
        prop_assert_eq!(warp_by_flow(&img, &identity_flow(5, 6)).unwrap(), img);
    }

    #[test]
    fn warp_is_linear_in_the_image(
        u in tensor(&[5, 6, 2], -1.0, 1.0),
        v in tensor(&[5, 6, 2], -1.0, 1.0),
        f in flow(5, 6, 3.0),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let mix = u.scale(a).add(&v.scale(b)).unwrap();
        let lhs = warp_by_flow(&mix, &f).unwrap();
        let rhs = warp_by_flow(&u, &f).unwrap().scale(a).add(&warp_by_flow(&v, &f).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn warp_output_is_bounded(img in tensor(&[5, 6, 1], -3.0, 3.0), f in flow(5, 6, 4.0)) {
        let (lo, hi) = (img.min(), img.max());
        for &v in warp_by_flow(&img, &f).unwrap().data() {
            prop_assert!(v == 0.0 || (v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }

    #[test]
    fn zero_tps_is_identity(img in tensor(&[7, 5, 3], 0.0, 1.0), rows in 3usize..6, cols in 3usize..6) {
        let f = tps_apply(&TpsParams::zeros(rows, cols), 7, 5).unwrap();
        prop_assert!(warp_by_flow(&img, &f).unwrap().max_abs_diff(&img) <= 1e-9);
    }

    #[test]
    fn sdc_vanishes_on_translations(dx in -5.0..5.0f64, dy in -5.0..5.0f64, off in tensor(&[3, 3, 2], -2.0, 2.0)) {
        prop_assert!(sdc_loss(&TpsParams::uniform(3, 3, dx, dy), 20, 20).unwrap().abs() <= 1e-9);
        prop_assert!(sdc_loss(&TpsParams::from_offsets(off).unwrap(), 20, 20).unwrap() >= 0.0);
    }

    #[test]
    fn sec_is_bounded_below(f in flow(5, 5, 1.0)) {
        let cfg = WarpLossConfig::default();
        let floor = sec_count(5, 5) as f64 * cfg.charbonnier(0.0);
        prop_assert!(sec_loss(&[f], &cfg).unwrap() >= floor - 1e-12);
    }

    #[test]
    fn charbonnier_is_even_and_increasing(x in 0.0..5.0f64, d in 1e-3..1.0f64) {
        let cfg = WarpLossConfig::default();
        prop_assert_eq!(cfg.charbonnier(x), cfg.charbonnier(-x));
        prop_assert!(cfg.charbonnier(x + d) > cfg.charbonnier(x));
    }

    #[test]
    fn ridge_is_linear(
        cols in vec(vec(-1.0..1.0f64, 8), 3),
        f in vec(-1.0..1.0f64, 8),
        g in vec(-1.0..1.0f64, 8),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let w = FlowWindow::from_columns(cols).unwrap();
        let mix: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
        let lhs = ridge_smooth(&mix, &w, 0.1).unwrap();
        let (sf, sg) = (ridge_smooth(&f, &w, 0.1).unwrap(), ridge_smooth(&g, &w, 0.1).unwrap());
        for i in 0..8 {
            prop_assert!((lhs[i] - (a * sf[i] + b * sg[i])).abs() <= 1e-10);
        }
    }

    #[test]
    fn unregularized_ridge_is_a_projector(cols in vec(vec(-1.0..1.0f64, 8), 3), f in vec(-1.0..1.0f64, 8)) {
        let w = FlowWindow::from_columns(cols).unwrap();
        let once = ridge_smooth(&f, &w, 0.0).unwrap();
        let twice = ridge_smooth(&once, &w, 0.0).unwrap();
        for i in 0..8 {
            prop_assert!((once[i] - twice[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn flow_correct_stays_between_candidates(
        a in flow(4, 4, 0.3),
        b in flow(4, 4, 0.3),
        omega in binary(&[4, 4]),
        eps in 0.01..0.5f64,
    ) {
        let out = flow_correct(&a, &b, &identity_flow(4, 4), &omega, eps).unwrap();
        let (o, x, y) = (out.coords().data(), a.coords().data(), b.coords().data());
        for i in 0..o.len() {
            if omega.data()[i / 2] == 0.0 {
                prop_assert_eq!(o[i], x[i]);
            }
            prop_assert!(o[i] >= x[i].min(y[i]) - 1e-12 && o[i] <= x[i].max(y[i]) + 1e-12);
        }
    }

    #[test]
    fn tracking_is_causal(flows in vec(flow(4, 4, 0.3), 6), k in 1usize..6) {
        let optical = vec![identity_flow(4, 4); 6];
        let omegas = vec![Tensor::ones(&[4, 4]); 6];
        let cfg = TrackConfig::default();
        let full = track_sequence(&flows, &optical, &omegas, &cfg).unwrap();
        let part = track_sequence(&flows[..k], &optical[..k], &omegas[..k], &cfg).unwrap();
        prop_assert_eq!(&full[..k], &part[..]);
    }

    #[test]
    fn masked_attention_weights(
        q in tensor(&[6, 3], -3.0, 3.0),
        k in tensor(&[6, 3], -3.0, 3.0),
        valid in vec(any::<bool>(), 6),
    ) {
        let tape = Tape::new();
        let v = tape.constant(Tensor::zeros(&[6, 3]));
        let (w, _) = patch_attention(tape.constant(q), tape.constant(k), v, Some(Rc::new(valid.clone()))).unwrap();
        let any = valid.iter().any(|&b| b);
        for row in w.value().data().chunks(6) {
            for (j, &x) in row.iter().enumerate() {
                if !valid[j] {
                    prop_assert_eq!(x, 0.0);
                }
            }
            let s: f64 = row.iter().sum();
            let ok = if any { (s - 1.0).abs() <= 1e-9 } else { s == 0.0 };
            prop_assert!(ok, "row sum {}", s);
        }
    }

    #[test]
    fn patch_split_merge_round_trip(x in tensor(&[2, 4, 6, 4], -1.0, 1.0), head in 0usize..2) {
        let tape = Tape::new();
        let ps = PatchSet::new((2, 4, 6), (2, 3), head * 2, 2, 4).unwrap();
        let merged = ps.merge(ps.split(tape.constant(x.clone())).unwrap()).unwrap().value();
        for (i, &v) in merged.data().iter().enumerate() {
            prop_assert_eq!(v, x.data()[(i / 2) * 4 + head * 2 + i % 2]);
        }
    }

    #[test]
    fn clothes_fusion_is_bounded(
        r in tensor(&[1, 3, 3, 3], -1.0, 1.0),
        c in tensor(&[1, 3, 3, 3], -1.0, 1.0),
        m in tensor(&[1, 3, 3, 1], 0.0, 1.0),
    ) {
        let tape = Tape::new();
        let out = fuse_clothes(tape.constant(r.clone()), tape.constant(m), tape.constant(c.clone())).unwrap().value();
        for i in 0..out.len() {
            let (lo, hi) = (r.data()[i].min(c.data()[i]), r.data()[i].max(c.data()[i]));
            prop_assert!(out.data()[i] >= lo - 1e-12 && out.data()[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn background_fusion_respects_the_mask(
        x in tensor(&[1, 3, 3, 3], -1.0, 1.0),
        a in tensor(&[1, 3, 3, 3], -1.0, 1.0),
        m in binary(&[1, 3, 3, 1]),
    ) {
        let tape = Tape::new();
        let av = tape.var(a.clone());
        let out = fuse_background(tape.constant(x), av, tape.constant(m.clone())).unwrap();
        let g = tape.backward(out.sum()).unwrap().wrt(av);
        for i in 0..a.len() {
            if m.data()[i / 3] == 1.0 {
                prop_assert_eq!(out.value().data()[i], a.data()[i]);
            } else {
                prop_assert_eq!(g.data()[i], 0.0);
            }
        }
    }

    #[test]
    fn l1_losses_are_nonnegative(p in tensor(&[1, 2, 2, 3], 0.0, 1.0), t in tensor(&[1, 2, 2, 3], 0.0, 1.0)) {
        let tape = Tape::new();
        let (pv, tv) = (tape.constant(p), tape.constant(t));
        let m = tape.constant(Tensor::ones(&[1, 2, 2, 1]));
        prop_assert!(l1_whole(pv, tv).unwrap().item() >= 0.0);
        prop_assert!(l1_clothes(pv, tv, m).unwrap().item() >= 0.0);
        prop_assert_eq!(l1_whole(pv, pv).unwrap().item(), 0.0);
        prop_assert_eq!(l1_clothes(pv, pv, m).unwrap().item(), 0.0);
    }

    #[test]
    fn frechet_is_symmetric(a in tensor(&[3, 3], -1.0, 1.0), b in tensor(&[3, 3], -1.0, 1.0), m1 in vec(-1.0..1.0f64, 3), m2 in vec(-1.0..1.0f64, 3)) {
        let spd = |x: &Tensor| {
            let s = x.matmul(&x.transpose().unwrap()).unwrap().add(&Tensor::eye(3).scale(0.1)).unwrap();
            s.add(&s.transpose().unwrap()).unwrap().scale(0.5)
        };
        let (c1, c2) = (spd(&a), spd(&b));
        let d12 = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        let d21 = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!(d12 >= 0.0);
        prop_assert!((d12 - d21).abs() <= 1e-8 * d12.max(1.0));
        prop_assert!(frechet_distance(&m1, &c1, &m1, &c1).unwrap() <= 1e-8);
    }

    #[test]
    fn adam_is_deterministic(p in tensor(&[4], -5.0, 5.0), g in tensor(&[4], -5.0, 5.0)) {
        let run = || {
            let mut x = vec![p.clone()];
            let mut s = AdamState::new(AdamConfig::default());
            for _ in 0..3 {
                adam_step(&mut x, std::slice::from_ref(&g), &mut s).unwrap();
            }
            (x, s)
        };
        prop_assert_eq!(run(), run());
    }
}

fn maps(seg: Tensor, dense: Tensor, matte: Tensor) -> LabelMaps {
    LabelMaps {
        seg,
        dense,
        pose: Tensor::zeros(&[2, 2]),
        matte,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn occlusion_is_monotone_in_the_matte(seg in labels(&[6, 6], 7), matte in binary(&[6, 6]), extra in binary(&[6, 6])) {
        let dense = Tensor::zeros(&[6, 6]);
        let bigger = matte.zip_with(&extra, "max", f64::max).unwrap();
        let small = occlusion_region(&maps(seg.clone(), dense.clone(), matte));
        let large = occlusion_region(&maps(seg, dense, bigger));
        for (s, l) in small.data().iter().zip(large.data()) {
            prop_assert!(s <= l);
        }
    }

    #[test]
    fn agnostic_composition(
        frame in tensor(&[6, 6, 3], 0.0, 1.0),
        seg in labels(&[6, 6], 7),
        dense in labels(&[6, 6], 6),
        matte in binary(&[6, 6]),
        radius in 0usize..3,
    ) {
        let table = LabelTable::default();
        let m = maps(seg, dense.clone(), matte);
        let a = compose_agnostic(&frame, &m, &table, radius, 0.5).unwrap();
        let again = compose_agnostic(&a.agnostic_img, &m, &table, radius, 0.5).unwrap();
        prop_assert_eq!(&again.agnostic_img, &a.agnostic_img);
        for i in 0..36 {
            if a.agnostic_mask.data()[i] != 0.0 {
                prop_assert!(a.occlusion_mask.data()[i] == 0.0);
                prop_assert!(!table.hands.contains(&(dense.data()[i] as u32)));
            }
        }
    }

    #[test]
    fn occluded_masking_stays_inside_the_clothes(
        clothes in tensor(&[8, 8, 3], 0.0, 1.0),
        keep in binary(&[8, 8]),
        occ in binary(&[8, 8]),
        off in tensor(&[3, 3, 2], -0.5, 0.5),
    ) {
        let c = Tensor::from_fn(&[8, 8, 3], |i| clothes.data()[i] * keep.data()[i / 3]);
        let out = mask_occluded_clothes(&c, &TpsParams::from_offsets(off).unwrap(), &occ).unwrap();
        let sup = support(&c);
        for i in 0..c.len() {
            if sup.data()[i / 3] == 0.0 {
                prop_assert_eq!(out.data()[i], c.data()[i]);
            }
        }
    }

    #[test]
    fn fit_never_ends_worse(shift in -1.5..1.5f64) {
        let clothes = Tensor::from_fn(&[12, 12, 3], |i| {
            let (y, x) = (i / 36, (i / 3) % 12);
            if (3..9).contains(&y) && (3..9).contains(&x) { 0.2 + 0.05 * (x + i % 3) as f64 } else { 0.0 }
        });
        let f = FlowField::from_flat(12, 12, identity_flow(12, 12).coords().data().iter().enumerate()
            .map(|(i, v)| if i % 2 == 0 { v + shift } else { *v }).collect()).unwrap();
        let target = warp_by_flow(&clothes, &f).unwrap();
        let r = fit_tps_grid(&clothes, &target, &WarpLossConfig::default(), 3, 3, 10, 0.1).unwrap();
        prop_assert!(r.loss <= r.initial_loss);
    }
}
