//! Measure DN_med on a rendered frame, then check it against a bias shift,
//! a gain change and injected hot pixels.

use spectranet::metrics::dn_med;
use spectranet::rng::rng_from_seed;
use spectranet::sim::{
    calibrate_exposure, compose_sed, inject_hot_pixels, render_frame, AtmosphereModel, DatasetSpec, Frame,
    InstrumentModel, Orientation, SolarSpectrum, OUTLIER_LEVEL, SOLAR_TEMPERATURE_K,
};

fn main() -> spectranet::Result<()> {
    let instr = InstrumentModel::default();
    let class = &DatasetSpec::default().class_library()?[0];
    let sun = SolarSpectrum::blackbody(&instr.grid, SOLAR_TEMPERATURE_K);
    let atm = AtmosphereModel::parametric(&instr.grid, 1.4, 8.0)?;
    let sed = compose_sed(class, &Orientation::NADIR, &sun, &atm)?;
    let cfg = instr.dnmed_config();

    for target in [50.0, 200.0, 1000.0] {
        let scale = calibrate_exposure(&sed, &instr, target)?;
        let frame = render_frame(&sed, &instr, scale, &mut rng_from_seed(1))?;
        let rep = dn_med(&frame, &cfg)?;
        let biased = Frame::new(frame.height, frame.width, frame.pixels.iter().map(|p| p + 500.0).collect())?;
        let gained = Frame::new(frame.height, frame.width, frame.pixels.iter().map(|p| 2.0 * p).collect())?;
        let mut hot = frame.clone();
        inject_hot_pixels(&mut hot, 50, OUTLIER_LEVEL, &mut rng_from_seed(2));
        println!(
            "target {target:6.0}: DN_med {:8.2} (rows {:?}), +500 bias {:8.2}, x2 gain {:8.2}, 50 hot pixels {:8.2}",
            rep.dnmed,
            rep.window,
            dn_med(&biased, &cfg)?.dnmed,
            dn_med(&gained, &cfg)?.dnmed,
            dn_med(&hot, &cfg)?.dnmed,
        );
    }
    Ok(())
}
