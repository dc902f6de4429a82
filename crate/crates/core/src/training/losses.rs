use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tape, Var};

/// How the distillation target is produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TeacherMode {
    /// A fixed copy of the full model; it never receives gradients.
    Frozen,
    /// The full-budget path of the student itself, anchored by a CE term.
    Trainable { alpha_ce: f64 },
}

/// Mean next-token NLL over non-padding positions.
pub fn ce_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
    tape.cross_entropy(logits, targets)
}

/// Forward KL from the teacher's to the student's softened distribution,
/// averaged over rows with a target.
pub fn kd_loss<T: Scalar>(tape: &mut Tape<T>, student: Var, teacher: Var, temperature: f64, targets: &[Option<usize>]) -> Result<Var> {
    let rows: alloc::vec::Vec<bool> = targets.iter().map(Option::is_some).collect();
    tape.kl_div(teacher, student, T::from_f64(temperature), Some(&rows))
}

/// Distillation objective of one budget. `teacher` holds the frozen
/// teacher's logits or the student's own full-budget logits.
pub fn task_loss<T: Scalar>(
    tape: &mut Tape<T>,
    student: Var,
    teacher: Var,
    targets: &[Option<usize>],
    mode: TeacherMode,
    temperature: f64,
    budget_is_full: bool,
) -> Result<Var> {
    let kd = kd_loss(tape, student, teacher, temperature, targets)?;
    match mode {
        TeacherMode::Frozen => Ok(kd),
        TeacherMode::Trainable { alpha_ce } => {
            if budget_is_full && alpha_ce == 0.0 {
                return Err(Error::SelfDistillation);
            }
            let ce = ce_loss(tape, teacher, targets)?;
            let ce = tape.scale(ce, T::from_f64(alpha_ce));
            tape.add(kd, ce)
        }
    }
}

/// `task + λ·router`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, task: Var, router: Var, lambda: f64) -> Result<Var> {
    let r = tape.scale(router, T::from_f64(lambda));
    tape.add(task, r)
}
