pub mod adversary;
pub mod bits;
pub mod bounds;
pub mod classical;
pub mod optimizer;
pub mod protocol;
pub mod qsim;
pub mod spacetime;
pub mod verify;
