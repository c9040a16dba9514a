use mwi_core::canon::Idx;
use mwi_core::fields::{current, lagrangian};
use mwi_core::scalar::{Scalar, Sym};
use mwi_core::tproduct::{verify_theorem, Direction};

fn main() {
    let entries = [lagrangian(), lagrangian(), lagrangian(), current(Idx(1))];
    for dir in [Direction::MwiToWi, Direction::WiToMwi] {
        let start = std::time::Instant::now();
        let report = verify_theorem(&entries, &Scalar::sym(Sym::C), dir);
        println!("{} ok={} in {:?}", dir.name(), report.ok(), start.elapsed());
    }
}
