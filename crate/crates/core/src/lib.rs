//! Hierarchical fault-tolerant locomotion for an 8-DOF quadruped.
//!
//! * [`sim`]: reduced-order physics with injectable joint faults.
//! * [`env`]: observations, rewards, termination, randomization and the
//!   partitioned vectorized environment.
//! * [`nets`]: dense/GRU layers with analytic gradients, Gaussian heads, Adam
//!   and the checkpoint format.
//! * [`policy`]: shared front network with per-status task heads.
//! * [`ppo`]: multi-task PPO with per-task routing and the two training stages.
//! * [`discriminator`]: recurrent fault classifier driving head switching.
//! * [`eval`]: survival, tracking, contact-time and trajectory experiments.

pub mod discriminator;
pub mod env;
pub mod eval;
pub mod nets;
pub mod policy;
pub mod ppo;
pub mod sim;
