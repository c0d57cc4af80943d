use std::sync::Arc;

use proptest::prelude::*;

use semilab::expr::{BinOp, Expr, Func, Node, NodeKind, Var};
use semilab::field::Field;
use semilab::geometry::{DomainMask, ExhaustionSequence, Grid};
use semilab::linalg::LinearSolverParams;
use semilab::nonlinearity::{MajorantPhi, Phi};
use semilab::operator::{assemble, AssembledOperator, CoefficientSet, SchemeOptions, SpatialFn};
use semilab::potential::DirichletSolver;
use semilab::solver::{solve_semilinear_dirichlet, SemilinearParams};

fn leaf() -> impl Strategy<Value = Node> {
    prop_oneof![
        (0.0f64..1e6).prop_map(|v| Node::new(NodeKind::Num(v))),
        (1usize..=3).prop_map(|k| Node::new(NodeKind::Var(Var::X(k)))),
        Just(Node::new(NodeKind::Var(Var::R))),
        Just(Node::new(NodeKind::Var(Var::T))),
    ]
}

fn binop() -> impl Strategy<Value = BinOp> {
    prop_oneof![
        Just(BinOp::Add),
        Just(BinOp::Sub),
        Just(BinOp::Mul),
        Just(BinOp::Div),
        Just(BinOp::Pow),
    ]
}

fn func() -> impl Strategy<Value = Func> {
    proptest::sample::select(Func::ALL.to_vec())
}

/// Random ASTs of depth at most 6.
fn ast() -> impl Strategy<Value = Node> {
    leaf().prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|n| Node::new(NodeKind::Neg(Box::new(n)))),
            (binop(), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| Node::new(NodeKind::Binary(op, Box::new(a), Box::new(b)))),
            (func(), proptest::collection::vec(inner, 2)).prop_map(|(f, mut args)| {
                args.truncate(f.arity());
                Node::new(NodeKind::Call(f, args))
            }),
        ]
    })
}

fn square(n: usize) -> (Arc<DomainMask>, AssembledOperator) {
    let g = Arc::new(Grid::cube(2, n, 0.0, 1.0).unwrap());
    let m = Arc::new(DomainMask::full(g).unwrap());
    let op = assemble(m.clone(), &CoefficientSet::laplacian(2), SchemeOptions::default()).unwrap();
    (m, op)
}

fn field_from(mask: &Arc<DomainMask>, vals: &[f64]) -> Field {
    Field::from_fn(mask.clone(), |i, _| vals[i % vals.len()])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn expr_print_parse_roundtrip(node in ast()) {
        let e = Expr::from_node(node);
        let reparsed = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(reparsed, e);
    }

    #[test]
    fn field_csv_roundtrip_is_bit_exact(vals in proptest::collection::vec(-1e300f64..1e300, 1..50)) {
        let (m, _) = square(7);
        let f = field_from(&m, &vals);
        let back = Field::from_csv(m.clone(), &f.to_csv()).unwrap();
        for i in m.closure_indices() {
            prop_assert_eq!(back.get(i).to_bits(), f.get(i).to_bits());
        }
    }

    #[test]
    fn green_is_linear_and_positive(
        g1 in proptest::collection::vec(0.0f64..5.0, 1..20),
        g2 in proptest::collection::vec(0.0f64..5.0, 1..20),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let (m, op) = square(9);
        let s = DirichletSolver::new(&op, LinearSolverParams::default()).unwrap();
        let (f1, f2) = (field_from(&m, &g1), field_from(&m, &g2));
        let mix = f1.scale(a).axpy(1.0, &f2.scale(b)).unwrap();
        let lhs = s.green_apply(&mix).unwrap();
        let rhs = s.green_apply(&f1).unwrap().scale(a)
            .axpy(1.0, &s.green_apply(&f2).unwrap().scale(b)).unwrap();
        let scale = 1.0 + lhs.interior_max().abs();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-10 * scale);
        prop_assert!(lhs.interior_min() >= -1e-13 * scale);
    }

    #[test]
    fn kernel_columns_reproduce_green_apply(vals in proptest::collection::vec(-2.0f64..2.0, 1..20)) {
        let (m, op) = square(7);
        let s = DirichletSolver::new(&op, LinearSolverParams::default()).unwrap();
        let g = field_from(&m, &vals);
        let direct = s.green_apply(&g).unwrap();
        let hd = m.grid().cell_volume();
        let mut sum = Field::zeros(m.clone());
        for y in m.interior_indices() {
            let col = s.green_kernel_column(y).unwrap();
            sum = col.scale(g.get(y) * hd).axpy(1.0, &sum).unwrap();
        }
        prop_assert!(direct.max_abs_diff(&sum).unwrap() <= 1e-10);
    }

    #[test]
    fn solutions_are_ordered_by_boundary_data(
        lo in proptest::collection::vec(0.0f64..2.0, 1..12),
        bump in proptest::collection::vec(0.0f64..2.0, 1..12),
        gamma in 0.1f64..1.0,
    ) {
        let (m, op) = square(9);
        let phi = Phi::power(SpatialFn::Const(1.0), gamma);
        let params = SemilinearParams::default();
        let f = field_from(&m, &lo);
        let g = f.axpy(1.0, &field_from(&m, &bump)).unwrap();
        let (uf, _) = solve_semilinear_dirichlet(&op, &phi, &f, &params).unwrap();
        let (ug, _) = solve_semilinear_dirichlet(&op, &phi, &g, &params).unwrap();
        let hf = DirichletSolver::new(&op, LinearSolverParams::default())
            .unwrap()
            .harmonic_extension(&f)
            .unwrap();
        for i in m.interior_indices() {
            prop_assert!(uf.get(i) <= ug.get(i) + 1e-8);
            prop_assert!(uf.get(i) >= -1e-12);
            prop_assert!(uf.get(i) <= hf.get(i) + 1e-8);
        }
    }

    #[test]
    fn majorant_dominates_and_vanishes_at_zero(gamma in 0.2f64..1.0, tilt in 0.0f64..0.5) {
        let g = Arc::new(Grid::cube(2, 5, -1.0, 1.0).unwrap());
        let m = Arc::new(DomainMask::full(g).unwrap());
        let p = SpatialFn::func(move |x| 1.0 + tilt * x[0]);
        let phi = Phi::power(p.clone(), gamma);
        let maj = MajorantPhi::build_default(&phi, &p.to_field(m.clone()).unwrap()).unwrap();
        let rep = maj.report().clone();
        prop_assert!(rep.domination_margin >= -1e-12);
        prop_assert!(rep.concavity_margin >= -1e-9);
        prop_assert_eq!(rep.value_at_zero, 0.0);
        prop_assert!(rep.constant_c.is_finite());
    }
}

#[test]
fn exhaustion_levels_decrease_pointwise() {
    let g = Arc::new(Grid::centered_cube(2, 4.0, 0.5).unwrap());
    let omega = Arc::new(DomainMask::full(g).unwrap());
    let seq = ExhaustionSequence::concentric_cubes(omega, &[0.0, 0.0], &[1.0, 2.0, 4.0]).unwrap();
    let run = semilab::experiments::run_exhaustion(
        &seq,
        &CoefficientSet::laplacian(2),
        &Phi::power(SpatialFn::Const(1.0), 0.5),
        1.0,
        &[0.0, 0.0],
        &Default::default(),
    )
    .unwrap();
    let per = run.per_level_on_core().unwrap();
    for w in per.windows(2) {
        for i in w[0].mask().interior_indices() {
            assert!(w[1].get(i) <= w[0].get(i) + 1e-8);
        }
    }
    assert!(run.v_c().interior_values().all(|(_, v)| (0.0..=1.0).contains(&v)));
}
