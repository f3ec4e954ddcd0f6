use adtool::format::{parse_dag, parse_program, print_program};
use adtool_core::basis::BasisOp;
use adtool_core::corpus::{random_dag_case, random_trace_case};
use adtool_core::Program;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn traces_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_trace_case(&mut rng, 6, 20, &BasisOp::ALL);
        let p = Program::Trace(case.program);
        let text = print_program(&p);
        prop_assert_eq!(&parse_program(&text).unwrap(), &p);
        prop_assert_eq!(print_program(&parse_program(&text).unwrap()), text);
    }

    #[test]
    fn graphs_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_dag_case(&mut rng, 4, 10, &BasisOp::ALL);
        let p = Program::Dag(case.program);
        let text = print_program(&p);
        prop_assert_eq!(&Program::Dag(parse_dag(&text).unwrap()), &p);
        prop_assert_eq!(print_program(&Program::Dag(parse_dag(&text).unwrap())), text);
    }

    #[test]
    fn literals_keep_every_bit(lit in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let text = format!("width 1\ninputs r0\noutputs r0\nr0 = mul_const r0 {lit:?}\n");
        let p = parse_program(&text).unwrap();
        prop_assert_eq!(print_program(&p), text);
    }
}

#[test]
fn graph_without_temporaries_parses_as_a_graph_on_request() {
    let text = "width 2\ninputs r0 r1\noutputs r0 r1\nr0 = mul r0 r1\n";
    let dag = parse_dag(text).unwrap();
    assert_eq!(dag.nodes().len(), 1);
    assert!(matches!(parse_program(text).unwrap(), Program::Trace(_)));
}
