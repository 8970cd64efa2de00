pub mod battery;
pub mod dq;
pub mod mpc;
pub mod netmodel;
pub mod oracle;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod vsc;
