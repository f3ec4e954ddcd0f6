use adtool_core::basis::BasisOp::*;
use adtool_core::lumpify::*;
use adtool_core::modes::{self, Mode};
use adtool_core::oracle::{dense_jacobian, oracle_product, rel_error, DenseMatrix};
use adtool_core::trace::{width_profile, Instruction};
use adtool_core::{AdError, Program, Trace, DEFAULT_SINGULAR_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn node(i: usize) -> DagArg {
    DagArg::Node(NodeId(i))
}

fn input(i: usize) -> DagArg {
    DagArg::Input(i)
}

fn chain(len: usize) -> Dag {
    let ops = [Exp, Sin, Atan, Neg];
    let nodes = (0..len)
        .map(|i| {
            let arg = if i == 0 { input(0) } else { node(i - 1) };
            (ops[i % ops.len()], vec![arg])
        })
        .collect();
    Dag::new(1, nodes, vec![node(len - 1)]).unwrap()
}

/// x ↦ 2x + 3x
fn diamond() -> Dag {
    Dag::new(
        1,
        vec![
            (MulConst, vec![input(0), DagArg::Literal(2.0)]),
            (MulConst, vec![input(0), DagArg::Literal(3.0)]),
            (Add, vec![node(0), node(1)]),
        ],
        vec![node(2)],
    )
    .unwrap()
}

/// Two independent diamonds, one per input. Nodes 0..3 belong to the first,
/// 3..6 to the second.
fn two_diamonds() -> Dag {
    Dag::new(
        2,
        vec![
            (MulConst, vec![input(0), DagArg::Literal(2.0)]),
            (Exp, vec![input(0)]),
            (Mul, vec![node(0), node(1)]),
            (MulConst, vec![input(1), DagArg::Literal(3.0)]),
            (Sin, vec![input(1)]),
            (Add, vec![node(3), node(4)]),
        ],
        vec![node(2), node(5)],
    )
    .unwrap()
}

fn ids(v: &[usize]) -> Vec<NodeId> {
    v.iter().map(|&i| NodeId(i)).collect()
}

#[test]
fn greedy_chain_cuts_everywhere() {
    let dag = chain(5);
    let s = greedy_schedule(&dag).unwrap();
    s.validate(&dag).unwrap();
    assert_eq!(s.cuts, vec![0, 1, 2, 3, 4, 5]);
    assert_eq!(s.lump_count(), 5);
    assert!(s.lumps().all(|l| l.len() == 1));
}

#[test]
fn greedy_diamond_is_one_lump() {
    let dag = diamond();
    let s = greedy_schedule(&dag).unwrap();
    s.validate(&dag).unwrap();
    assert_eq!(s.cuts, vec![0, 3]);
    assert_eq!(s.widths, vec![1, 2, 2, 1]);
    assert_eq!(schedule_stats(&dag, &s).max_lump_width, 2);
}

#[test]
fn dropping_an_active_value_underflows() {
    let dag = Dag::new(
        2,
        vec![(Add, vec![input(0), input(1)]), (Sin, vec![node(0)])],
        vec![node(0), node(1)],
    )
    .unwrap();
    assert!(matches!(
        greedy_schedule(&dag),
        Err(AdError::WidthUnderflow { width: 1, n: 2, .. })
    ));
    for obj in Objective::ALL {
        assert!(matches!(brute_force_schedule(&dag, obj), Err(AdError::WidthUnderflow { .. })));
    }
    assert!(matches!(
        lumped_mode_eval(&dag, &[1.0, 2.0], &[1.0, 0.0], Mode::ReverseInverse),
        Err(AdError::WidthUnderflow { .. })
    ));
}

#[test]
fn brute_force_matches_greedy_on_chain_and_diamond() {
    for dag in [chain(4), diamond()] {
        for obj in Objective::ALL {
            let b = brute_force_schedule(&dag, obj).unwrap();
            b.validate(&dag).unwrap();
            assert_eq!(b.cuts, greedy_schedule(&dag).unwrap().cuts);
        }
    }
    let d = diamond();
    let s = brute_force_schedule(&d, Objective::Width).unwrap();
    assert_eq!(schedule_stats(&d, &s).max_lump_width, 2);
}

#[test]
fn two_diamonds_best_and_worst_orders() {
    let dag = two_diamonds();
    let best = brute_force_schedule(&dag, Objective::Size).unwrap();
    best.validate(&dag).unwrap();
    assert_eq!(schedule_stats(&dag, &best).max_lump_size, 3);
    assert_eq!(best.lump_count(), 2);

    let worst = LumpSchedule::from_order(&dag, ids(&[0, 3, 1, 4, 2, 5])).unwrap();
    worst.validate(&dag).unwrap();
    assert_eq!(worst.cuts, vec![0, 6]);
    assert_eq!(schedule_stats(&dag, &worst).max_lump_size, 6);

    let greedy = greedy_schedule(&dag).unwrap();
    assert_eq!(schedule_stats(&dag, &greedy).max_lump_size, 3);
}

#[test]
fn brute_force_refuses_large_graphs() {
    assert!(matches!(
        brute_force_schedule(&chain(13), Objective::Size),
        Err(AdError::SizeLimit { nodes: 13, limit: 12 })
    ));
    assert!(brute_force_schedule(&chain(12), Objective::Size).is_ok());
}

#[test]
fn from_order_rejects_non_topological_orders() {
    let dag = diamond();
    assert!(LumpSchedule::from_order(&dag, ids(&[2, 0, 1])).is_err());
    assert!(LumpSchedule::from_order(&dag, ids(&[0, 0, 2])).is_err());
    assert!(LumpSchedule::from_order(&dag, ids(&[1, 0, 2])).is_ok());
}

fn single_plan(dag: &Dag) -> LumpPlan {
    plan_lumps(dag, &greedy_schedule(dag).unwrap())
}

#[test]
fn linearization_of_a_single_mul() {
    let dag = Dag::new(2, vec![(Mul, vec![input(0), input(1)])], vec![node(0), input(1)]).unwrap();
    let plan = single_plan(&dag);
    assert_eq!(plan.lumps.len(), 1);
    let lump = &plan.lumps[0];
    assert_eq!((lump.l(), lump.k()), (1, 2));
    let values = dag.eval_values(&[3.0, 2.0]).unwrap();
    let lin = lump_linearization(&dag, lump, &values);
    assert_eq!(lin.a, DenseMatrix::from_rows(&[vec![2.0]]));
    assert_eq!(lin.b, DenseMatrix::from_rows(&[vec![3.0]]));
}

#[test]
fn linearization_of_pass_through_lumps() {
    let dag = Dag::new(
        2,
        vec![
            (MulConst, vec![input(0), DagArg::Literal(1.0)]),
            (MulConst, vec![input(1), DagArg::Literal(1.0)]),
        ],
        vec![node(0), node(1)],
    )
    .unwrap();
    let values = dag.eval_values(&[0.3, -0.7]).unwrap();
    for lump in &single_plan(&dag).lumps {
        let lin = lump_linearization(&dag, lump, &values);
        assert_eq!(lin.a, DenseMatrix::identity(1));
        assert_eq!(lin.b.cols, 0);
    }
}

#[test]
fn linearization_of_a_squaring_diamond() {
    let dag = Dag::new(
        1,
        vec![
            (MulConst, vec![input(0), DagArg::Literal(1.0)]),
            (MulConst, vec![input(0), DagArg::Literal(1.0)]),
            (Mul, vec![node(0), node(1)]),
        ],
        vec![node(2)],
    )
    .unwrap();
    let plan = single_plan(&dag);
    assert_eq!(plan.lumps.len(), 1);
    let lump = &plan.lumps[0];
    assert_eq!((lump.l(), lump.k()), (1, 1));
    let lin = lump_linearization(&dag, lump, &dag.eval_values(&[3.0]).unwrap());
    assert_eq!(lin.a, DenseMatrix::from_rows(&[vec![6.0]]));
    assert_eq!(lin.b.cols, 0);
}

fn lin(a: &[Vec<f64>], b: &[Vec<f64>]) -> LumpLinearization {
    LumpLinearization {
        a: DenseMatrix::from_rows(a),
        b: DenseMatrix::from_rows(b),
    }
}

#[test]
fn invert_lump_examples() {
    let inv = invert_lump(&lin(&[vec![2.0]], &[vec![3.0]]), 0).unwrap();
    assert_eq!(inv.a_inv, DenseMatrix::from_rows(&[vec![0.5]]));
    assert_eq!(inv.neg_a_inv_b, DenseMatrix::from_rows(&[vec![-1.5]]));

    let id = invert_lump(&lin(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0], vec![0.0]]), 0).unwrap();
    assert_eq!(id.a_inv, DenseMatrix::identity(2));
    assert!(id.neg_a_inv_b.data.iter().all(|&v| v == 0.0));

    let inv = invert_lump(&lin(&[vec![1.0, 1.0], vec![0.0, 2.0]], &[vec![1.0], vec![1.0]]), 0).unwrap();
    assert_eq!(inv.a_inv, DenseMatrix::from_rows(&[vec![1.0, -0.5], vec![0.0, 0.5]]));
    assert_eq!(inv.neg_a_inv_b, DenseMatrix::from_rows(&[vec![-0.5], vec![-0.5]]));
}

#[test]
fn invert_lump_reports_singular_blocks() {
    let singular = lin(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[vec![1.0], vec![0.0]]);
    assert!(matches!(invert_lump(&singular, 4), Err(AdError::SingularLump { lump: 4, .. })));
}

fn block_jacobian(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let l = a.rows;
    let k = l + b.cols;
    let mut m = DenseMatrix::identity(k);
    for i in 0..l {
        for j in 0..l {
            m.set(i, j, a.get(i, j));
        }
        for j in 0..b.cols {
            m.set(i, l + j, b.get(i, j));
        }
    }
    m
}

#[test]
fn invert_lump_round_trips_on_random_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for l in 1..=5 {
        for extra in 0..=3 {
            for _ in 0..25 {
                let mut a = DenseMatrix::zeros(l, l);
                for i in 0..l {
                    for j in 0..l {
                        a.set(i, j, rng.gen_range(-1.0..1.0));
                    }
                    a.set(i, i, a.get(i, i) + 2.0 * l as f64);
                }
                let mut b = DenseMatrix::zeros(l, extra);
                b.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                let inv = invert_lump(&LumpLinearization { a: a.clone(), b: b.clone() }, 0).unwrap();
                let product = block_jacobian(&inv.a_inv, &inv.neg_a_inv_b).matmul(&block_jacobian(&a, &b));
                let err = product.distance_inf(&DenseMatrix::identity(l + extra));
                assert!(err <= 1e-10, "l={l} extra={extra}: {err}");
            }
        }
    }
}

#[test]
fn diamond_inverse_tangent_is_reciprocal_of_total_derivative() {
    let dag = diamond();
    let got = lumped_mode_eval(&dag, &[0.4], &[1.0], Mode::ReverseInverse).unwrap();
    assert!((got[0] - 0.2).abs() <= 1e-15);
    let got = lumped_mode_eval(&dag, &[0.4], &[1.0], Mode::ForwardInverse).unwrap();
    assert!((got[0] - 0.2).abs() <= 1e-15);
    assert_eq!(lumped_mode_eval(&dag, &[0.4], &[1.0], Mode::Forward).unwrap(), vec![5.0]);
    assert_eq!(lumped_mode_eval(&dag, &[0.4], &[1.0], Mode::Reverse).unwrap(), vec![5.0]);
}

#[test]
fn two_diamonds_agree_with_oracle_in_every_mode() {
    let dag = two_diamonds();
    let program = Program::Dag(dag.clone());
    let x = [0.7, 0.3];
    let jac = dense_jacobian(&program, &x).unwrap();
    let best = brute_force_schedule(&dag, Objective::Size).unwrap();
    let worst = LumpSchedule::from_order(&dag, ids(&[0, 3, 1, 4, 2, 5])).unwrap();
    for v in [[1.0, 0.0], [0.0, 1.0], [0.5, -2.0]] {
        for mode in Mode::ALL {
            let expected = oracle_product(&jac, &v, mode).unwrap();
            for schedule in [&best, &worst] {
                let got = lumped_mode_eval_with(&dag, schedule, &x, &v, mode).unwrap();
                assert!(rel_error(&got, &expected) <= 1e-8, "{mode:?}");
            }
            let got = lumped_mode_eval(&dag, &x, &v, mode).unwrap();
            assert!(rel_error(&got, &expected) <= 1e-8, "{mode:?}");
        }
    }
}

#[test]
fn constant_width_trace_as_dag_matches_modes() {
    let t = Trace::new(
        2,
        vec![
            Instruction::binary(Mul, 0, 1),
            Instruction::unary(Sin, 1),
            Instruction::binary(Sub, 1, 0),
            Instruction::unary(Exp, 0),
        ],
        vec![0, 1],
        vec![0, 1],
    )
    .unwrap();
    let dag = Dag::from_trace(&t).unwrap();
    let s = greedy_schedule(&dag).unwrap();
    assert!(s.lumps().all(|l| l.len() == 1));
    let x = [0.6, 1.1];
    for v in [[1.0, 0.0], [0.0, 1.0], [0.25, -0.5]] {
        for mode in Mode::ALL {
            let expected = modes::evaluate(&t, &x, &v, mode, DEFAULT_SINGULAR_TOL).unwrap();
            let got = lumped_mode_eval(&dag, &x, &v, mode).unwrap();
            assert!(rel_error(&got, &expected) <= 1e-15, "{mode:?}: {got:?} vs {expected:?}");
        }
    }
}

#[test]
fn lowered_diamond_widens_then_narrows() {
    let dag = diamond();
    let trace = lower_dag(&dag, &greedy_schedule(&dag).unwrap()).unwrap();
    assert_eq!(trace.width(), 2);
    assert_eq!(width_profile(&trace), vec![1, 2, 2, 1]);
    let out = trace.eval(&[1.5, 0.0]).unwrap();
    assert_eq!(out[trace.output_slots()[0].0], 7.5);
}

#[test]
fn lowered_chain_is_in_overwrite_form() {
    let dag = chain(4);
    let trace = lower_dag(&dag, &greedy_schedule(&dag).unwrap()).unwrap();
    assert!(trace.is_overwrite_form());
    assert_eq!(width_profile(&trace), vec![1; 5]);
}

#[test]
fn lump_shapes_report_l_and_k() {
    let dag = two_diamonds();
    let s = brute_force_schedule(&dag, Objective::Lk).unwrap();
    let shapes = lump_shapes(&dag, &s);
    assert!(shapes.iter().all(|sh| sh.l == 1 && sh.k == 1));
    let stats = schedule_stats(&dag, &s);
    assert_eq!((stats.max_l, stats.max_k), (1, 1));
}
