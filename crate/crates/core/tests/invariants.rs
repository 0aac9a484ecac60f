use proptest::prelude::*;

use mergefront::encoder::TokenMatrix;
use mergefront::flops::{schedule_flops, token_counts};
use mergefront::merging::{merge_layer, MergeSchedule};
use mergefront::mobo::{hypervolume_2d, pareto_filter, Objectives, ParetoPoint};
use mergefront::tensor::Matrix;
use mergefront::ModelDims;

fn tokens(n: usize, width: usize) -> impl Strategy<Value = (Matrix, Matrix)> {
    let cells = prop::collection::vec(-2.0f32..2.0, n * width);
    (cells.clone(), cells).prop_map(move |(z, v)| {
        (Matrix::from_vec(n, width, z).unwrap(), Matrix::from_vec(n, width, v).unwrap())
    })
}

proptest! {
    #[test]
    fn merged_tokens_stay_in_the_input_hull(
        (z, v) in (2usize..12).prop_flat_map(|n| tokens(n, 3)),
        p in 0.0f64..=0.3,
    ) {
        let n = z.rows();
        let (out, _) = merge_layer(&TokenMatrix::new(z.clone(), 1).unwrap(), &v, p).unwrap();
        let r = ((p * n as f64 + 1e-9).floor() as usize).min((n - 1).div_ceil(2));
        prop_assert_eq!(out.len(), n - r);
        for c in 0..3 {
            let col: Vec<f32> = (0..n).map(|i| z.get(i, c)).collect();
            // The combination shrinks slightly toward zero.
            let lo = col.iter().copied().fold(0.0f32, f32::min) - 1e-5;
            let hi = col.iter().copied().fold(0.0f32, f32::max) + 1e-5;
            for i in 0..out.len() {
                let x = out.matrix().get(i, c);
                prop_assert!(x >= lo && x <= hi, "{} outside [{}, {}]", x, lo, hi);
            }
        }
    }

    #[test]
    fn class_token_is_never_merged((z, v) in tokens(9, 4), p in 0.0f64..=0.3) {
        let (out, _) = merge_layer(&TokenMatrix::new(z.clone(), 1).unwrap(), &v, p).unwrap();
        prop_assert_eq!(out.matrix().row(0), z.row(0));
    }

    #[test]
    fn token_counts_never_grow(p in prop::collection::vec(0.0f64..=0.3, 4)) {
        let counts = token_counts(&MergeSchedule::new(p).unwrap(), &ModelDims::toy()).unwrap();
        prop_assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(*counts.last().unwrap() >= 1);
    }

    #[test]
    fn more_merging_never_costs_more(p in prop::collection::vec(0.0f64..=0.3, 4), layer in 0usize..4, extra in 0.0f64..=0.3) {
        let dims = ModelDims::toy();
        let base = schedule_flops(&MergeSchedule::new(p.clone()).unwrap(), &dims).unwrap().total;
        let mut q = p;
        q[layer] = (q[layer] + extra).min(0.3);
        let more = schedule_flops(&MergeSchedule::new(q).unwrap(), &dims).unwrap().total;
        prop_assert!(more <= base);
    }

    #[test]
    fn hypervolume_grows_with_points(
        pts in prop::collection::vec((0.0f64..1.0, 0.0f64..10.0), 0..12),
        extra in (0.0f64..1.0, 0.0f64..10.0),
    ) {
        let reference = Objectives::new(0.0, 10.0);
        let mut objs: Vec<Objectives> = pts.iter().map(|&(a, f)| Objectives::new(a, f)).collect();
        let before = hypervolume_2d(&objs, &reference);
        objs.push(Objectives::new(extra.0, extra.1));
        prop_assert!(hypervolume_2d(&objs, &reference) >= before - 1e-12);
    }

    #[test]
    fn front_members_are_not_dominated(pts in prop::collection::vec((0u32..20, 1u64..20), 1..60)) {
        let points: Vec<ParetoPoint> = pts
            .iter()
            .map(|&(a, f)| ParetoPoint { schedule: MergeSchedule::zeros(1), accuracy: a as f64 / 20.0, flops: f })
            .collect();
        let front = pareto_filter(&points, Objectives::new(-1.0, 100.0));
        prop_assert!(!front.points.is_empty());
        for m in &front.points {
            for q in &points {
                let dominated = q.accuracy >= m.accuracy && q.flops <= m.flops && (q.accuracy > m.accuracy || q.flops < m.flops);
                prop_assert!(!dominated);
            }
        }
    }
}
