//! Synthetic spectrograph frames.

pub mod class_spec;
pub mod dataset;
pub mod frame;
pub mod instrument;
pub mod orientation;
pub mod spectra;

pub use class_spec::{compose_sed, generate_class_library, ClassLibraryConfig, ClassSpecFile, SatelliteClassSpec};
pub use dataset::{generate_dataset, DatasetSpec};
pub use frame::{Frame, FrameMeta};
pub use instrument::{
    calibrate_exposure, inject_cosmic_rays, inject_hot_pixels, render_frame, render_noiseless, Dispersion,
    InstrumentModel, OUTLIER_LEVEL,
};
pub use orientation::{sample_orientation, Orientation, OrientationPolicy};
pub use spectra::{AtmosphereModel, MaterialSpectrum, SolarSpectrum, WavelengthGrid, SOLAR_TEMPERATURE_K};
