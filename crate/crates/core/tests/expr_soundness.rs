use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdrlmi::expr::{parse, BoundMode, Expr, ExprError};

const CORPUS: &[&str] = &[
    "1 + 0.1*sinc(x1)",
    "0.9 + 0.1*x1^2",
    "0.1 + 0.1*abs(x2)",
    "0.1*exp(x1)",
    "exp(x2)",
    "sin(x1)*tan(x2)",
    "cos(x1)*tan(x2)",
    "sin(x1)/cos(x2)",
    "cos(x1)/cos(x2)",
    "0.002*sin(x1)*tan(x2)",
    "-0.0013*x3",
    "x1*x2 - x3^3",
    "pow(x1, -2) + 1",
    "sinc(x1 - x2)*cos(3*x3)",
    "abs(x1 - 0.3) - abs(x2)",
    "exp(-x1^2)/(2 + sin(x2))",
    "x1^4 - 2*x1^2 + x3",
    "-(x2 - -0.5)^3",
];

fn random_expr(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.6) {
            format!("x{}", rng.gen_range(1..=3))
        } else {
            format!("{:.3}", rng.gen_range(-2.0..2.0))
        };
    }
    let a = random_expr(rng, depth - 1);
    match rng.gen_range(0..8) {
        0 => format!("({a} + {})", random_expr(rng, depth - 1)),
        1 => format!("({a} - {})", random_expr(rng, depth - 1)),
        2 => format!("({a} * {})", random_expr(rng, depth - 1)),
        3 => format!("({a} / (3 + {}))", random_expr(rng, depth - 1)),
        4 => format!("({a})^{}", rng.gen_range(1..=4)),
        5 => format!("-({a})"),
        _ => {
            let f = ["abs", "sin", "cos", "exp", "sinc", "tan"][rng.gen_range(0..6)];
            format!("{f}({a})")
        }
    }
}

/// Checks `points` random points of the box against the enclosure.
/// Domain errors of the enclosure skip the box; they are reported, not
/// silently widened.
fn check_box(e: &Expr, lo: &[f64], width: &[f64], points: usize, seed: u64) -> Result<(), TestCaseError> {
    let bx: Vec<_> = lo.iter().zip(width).map(|(l, w)| sdrlmi::expr::Interval::new(*l, l + w)).collect();
    let enc = match e.bound_over_box(&bx) {
        Ok(enc) => enc,
        Err(ExprError::Domain(_)) => return Ok(()),
        Err(err) => return Err(TestCaseError::fail(err.to_string())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..points {
        let x: Vec<f64> = bx.iter().map(|i| rng.gen_range(i.lo..=i.hi)).collect();
        if let Ok(v) = e.eval(&x) {
            prop_assert!(enc.lo <= v && v <= enc.hi, "{e} = {v} at {x:?} outside {enc}");
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn corpus_enclosures_are_sound(
        lo in prop::collection::vec(-1.5f64..1.0, 3),
        width in prop::collection::vec(0.0f64..1.5, 3),
        seed in any::<u64>(),
    ) {
        for src in CORPUS {
            check_box(&parse(src).unwrap(), &lo, &width, 200, seed)?;
        }
    }

    #[test]
    fn random_expression_enclosures_are_sound(
        expr_seed in any::<u64>(),
        lo in prop::collection::vec(-2.0f64..1.0, 3),
        width in prop::collection::vec(0.0f64..2.0, 3),
    ) {
        let src = random_expr(&mut ChaCha8Rng::seed_from_u64(expr_seed), 4);
        let e = parse(&src).unwrap();
        check_box(&e, &lo, &width, 200, expr_seed)?;
    }

    #[test]
    fn printed_expressions_parse_to_the_same_function(
        expr_seed in any::<u64>(),
        x in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let e = parse(&random_expr(&mut ChaCha8Rng::seed_from_u64(expr_seed), 4)).unwrap();
        let again = parse(&e.to_string()).unwrap();
        match (e.eval(&x), again.eval(&x)) {
            (Ok(a), Ok(b)) => prop_assert!(a == b || (a.is_nan() && b.is_nan()), "{e}: {a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{e}: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn grid_bound_lies_within_box_bound(expr_seed in any::<u64>(), r in 0.05f64..1.5) {
        let e = parse(&random_expr(&mut ChaCha8Rng::seed_from_u64(expr_seed), 3)).unwrap();
        let bx = e.bound_over_ball(3, r, BoundMode::IntervalBox);
        let grid = e.bound_over_ball(3, r, BoundMode::Grid { per_axis: 11, inflation: 0.02 });
        if let (Ok(bx), Ok(grid)) = (bx, grid) {
            prop_assert!(bx.contains_interval(&grid), "{e}: grid {grid} not in box {bx}");
        }
    }
}

#[test]
fn ten_thousand_points_on_the_example_box() {
    for src in CORPUS {
        let e = parse(src).unwrap();
        check_box(&e, &[-1.1, -1.1, -1.1], &[2.2, 2.2, 2.2], 10_000, 1).unwrap();
    }
}
