//! Regenerates the synthetic layout fixtures under `fixtures/synthetic/`.
//!
//!     cargo run -p gxestat-core --example make_synthetic_fixtures
//!
//! Both files are simulated from a seeded mixed model. They share the layout of
//! the real trial files (same factors, level names and counts) but none of
//! their values.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const WATERMELON_GENOTYPES: [&str; 10] = [
    "EarlyCanada",
    "CalhounGray",
    "StarbriteF1",
    "CrimsonSweet",
    "GeorgiaRattlesnake",
    "FiestaF1",
    "Mickylee",
    "SugarBaby",
    "Legacy",
    "Quetzali",
];
const WATERMELON_LOCATIONS: [&str; 5] = ["KN", "TN", "FL", "TX", "CL"];
const WATERMELON_YEARS: [&str; 2] = ["2009", "2010"];

fn draws(rng: &mut ChaCha8Rng, sd: f64, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, sd).expect("valid sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn watermelon(rng: &mut ChaCha8Rng) -> String {
    let (g, l, y, r) = (10, 5, 2, 4);
    let lc = draws(rng, 26.0, l);
    let yl = draws(rng, 7.6, y * l);
    let clt = draws(rng, 10.5, g);
    let ylc = draws(rng, 7.0, y * l * g);
    let rp = draws(rng, 8.6, y * l * r);
    let eps = draws(rng, 18.0, y * l * r * g);

    let mut out = String::from("YR,LC,RP,CLT,MY\n");
    for (yi, year) in WATERMELON_YEARS.iter().enumerate() {
        for (li, loc) in WATERMELON_LOCATIONS.iter().enumerate() {
            for ri in 0..r {
                for (gi, gen) in WATERMELON_GENOTYPES.iter().enumerate() {
                    let env = yi * l + li;
                    let v = 60.0
                        + lc[li]
                        + yl[env]
                        + clt[gi]
                        + ylc[env * g + gi]
                        + rp[env * r + ri]
                        + eps[(env * r + ri) * g + gi];
                    writeln!(out, "{year},{loc},{},{gen},{:.3}", ri + 1, v).unwrap();
                }
            }
        }
    }
    out
}

fn oats(rng: &mut ChaCha8Rng) -> String {
    let (g, l, r) = (24, 6, 3);
    let lc = draws(rng, 0.08, l);
    let clt = draws(rng, 0.12, g);
    let gl = draws(rng, 0.2, g * l);
    let rp = draws(rng, 0.06, l * r);
    let eps = draws(rng, 0.37, g * l * r);

    let mut out = String::from("LC,RP,CLT,MY\n");
    for li in 0..l {
        for ri in 0..r {
            for gi in 0..g {
                let v = 4.2
                    + lc[li]
                    + clt[gi]
                    + gl[gi * l + li]
                    + rp[li * r + ri]
                    + eps[(li * r + ri) * g + gi];
                writeln!(out, "B{},{},G{:02},{:.3}", li + 1, ri + 1, gi + 1, v).unwrap();
            }
        }
    }
    out
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic");
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    let mut rng = ChaCha8Rng::seed_from_u64(20_091_010);
    std::fs::write(dir.join("watermelon_layout.csv"), watermelon(&mut rng)).expect("write");
    let mut rng = ChaCha8Rng::seed_from_u64(24_006_003);
    std::fs::write(dir.join("oats_layout.csv"), oats(&mut rng)).expect("write");
    println!("wrote {}", dir.display());
}
