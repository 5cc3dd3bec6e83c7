use pcdefense::attacks::{attack_pgd, AttackSpec};
use pcdefense::dataset::{generate_shape, ShapeKind};
use pcdefense::victims::{Classifier, DgcnnMini, PointNetMini};
use std::time::Instant;

#[test]
#[ignore]
fn probe() {
    let ex = generate_shape::<f64>(ShapeKind::Torus, 256, 1).unwrap();
    let pn = PointNetMini::<f64>::new(8, 128, 0);
    let dg = DgcnnMini::<f64>::new(8, 128, 8, 0);

    let t = Instant::now();
    for _ in 0..20 { pn.ce_param_grads(&ex.cloud, ex.label).unwrap(); }
    println!("pointnet ce_param_grads: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 20.0);

    let t = Instant::now();
    for _ in 0..20 { pcdefense::victims::input_gradient(&pn, &ex.cloud, ex.label).unwrap(); }
    println!("pointnet input_gradient: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 20.0);

    let t = Instant::now();
    for _ in 0..20 { dg.ce_param_grads(&ex.cloud, ex.label).unwrap(); }
    println!("dgcnn ce_param_grads: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 20.0);

    let spec = AttackSpec::default_for("pgd").unwrap();
    let t = Instant::now();
    attack_pgd(&pn, &ex, &spec).unwrap();
    println!("pgd 50 steps pointnet: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0);

    let t = Instant::now();
    attack_pgd(&dg, &ex, &spec).unwrap();
    println!("pgd 50 steps dgcnn: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0);
}
