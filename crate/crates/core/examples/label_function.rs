//! The ground-truth offer is a function of the angle between the customer
//! and campaign feature vectors, cut into equal sectors of [0, pi].

use promobench::synthgen::optimal_offer;

fn main() -> promobench::Result<()> {
    let c = [1.0, 0.0, 0.0];
    for deg in [0.0_f64, 10.0, 17.9, 18.1, 45.0, 90.0, 135.0, 179.0, 180.0] {
        let r = deg.to_radians();
        let p = [r.cos(), r.sin(), 0.0];
        println!("{deg:>6.1} deg -> offer {}", optimal_offer(c, p, 10)?);
    }

    // symmetric and blind to positive scale
    let a = [0.3, -0.2, 0.1];
    let b = [-0.1, 0.4, 0.05];
    let ab = optimal_offer(a, b, 10)?;
    assert_eq!(ab, optimal_offer(b, a, 10)?);
    assert_eq!(ab, optimal_offer([0.9, -0.6, 0.3], [-1e-3, 4e-3, 5e-4], 10)?);
    println!("offer({a:?}, {b:?}) = {ab}");

    match optimal_offer([0.0; 3], b, 10) {
        Err(e) => println!("zero vector: {e}"),
        Ok(o) => println!("zero vector unexpectedly labeled {o}"),
    }
    Ok(())
}
