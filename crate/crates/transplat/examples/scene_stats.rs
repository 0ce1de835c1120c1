use std::path::Path;
fn main() {
    let path = std::env::args().nth(1).unwrap();
    let s = transplat::scene::load_scene(Path::new(&path)).unwrap();
    let n = s.gaussians.len();
    let mut big05 = 0usize;
    let mut big10 = 0usize;
    let mut bo = vec![];
    let mut zs: Vec<f64> = vec![];
    let mut ops: Vec<f64> = vec![];
    for (i, g) in s.gaussians.iter().enumerate() {
        let act = transplat::scene::activate(g);
        let smax = act.scale.max();
        if smax > 0.05 { big05 += 1; }
        if smax > 0.1 { big10 += 1; }
        if smax > 0.05 && act.opacity > 0.9 { bo.push((i, act.center, act.scale, act.opacity)); }
        zs.push(act.center.z);
        ops.push(act.opacity);
    }
    zs.sort_by(f64::total_cmp);
    ops.sort_by(f64::total_cmp);
    let q = |v: &Vec<f64>, p: f64| v[((v.len() - 1) as f64 * p) as usize];
    println!("n={n} scale>0.05: {big05}  scale>0.1: {big10}");
    println!("z quantiles: {:?}", [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0].map(|p| (q(&zs, p) * 1000.0).round() / 1000.0));
    println!("opacity quantiles: {:?}", [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| (q(&ops, p) * 1000.0).round() / 1000.0));
    println!("big+opaque: {}", bo.len());
    for (i, c, s, o) in bo.iter().take(8) {
        println!("  #{i} c=({:.3},{:.3},{:.3}) sig=({:.3},{:.3},{:.3}) op={:.3}", c.x, c.y, c.z, s.x, s.y, s.z, o);
    }
}
// (second pass appended below in main via env var? no—simple: group stats)
