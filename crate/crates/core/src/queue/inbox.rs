//! Unbounded multi-producer single-consumer inbox.
//!
//! Producers push onto an atomic singly linked stack with a CAS loop
//! (lock-free: a failed CAS means another push succeeded). The consumer takes
//! the whole stack with one `swap` and reverses it, so a drain is wait-free
//! and returns messages in push order. Nodes are never popped one at a time,
//! which rules out the ABA problem: producers only ever link to the head they
//! observed and never dereference it.

use std::ptr;
use std::sync::atomic::{AtomicPtr, Ordering};

struct Node<T> {
    value: T,
    next: *mut Node<T>,
}

pub struct Inbox<T> {
    head: AtomicPtr<Node<T>>,
}

unsafe impl<T: Send> Send for Inbox<T> {}
unsafe impl<T: Send> Sync for Inbox<T> {}

impl<T> Default for Inbox<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> Inbox<T> {
    pub fn new() -> Self {
        Inbox {
            head: AtomicPtr::new(ptr::null_mut()),
        }
    }

    /// Callable from any thread.
    pub fn push(&self, value: T) {
        let node = Box::into_raw(Box::new(Node {
            value,
            next: ptr::null_mut(),
        }));
        let mut head = self.head.load(Ordering::Relaxed);
        loop {
            // SAFETY: `node` is exclusively ours until the CAS publishes it.
            unsafe { (*node).next = head };
            match self
                .head
                .compare_exchange_weak(head, node, Ordering::SeqCst, Ordering::Relaxed)
            {
                Ok(_) => return,
                Err(current) => head = current,
            }
        }
    }

    /// Removes and returns every message pushed before this call, oldest
    /// first. Must only be called by the owning consumer.
    pub fn drain(&self) -> Vec<T> {
        let mut cur = self.head.swap(ptr::null_mut(), Ordering::SeqCst);
        let mut out = Vec::new();
        while !cur.is_null() {
            // SAFETY: the swap gave us sole ownership of the detached list.
            let node = unsafe { Box::from_raw(cur) };
            cur = node.next;
            out.push(node.value);
        }
        out.reverse();
        out
    }

    pub fn is_empty(&self) -> bool {
        self.head.load(Ordering::SeqCst).is_null()
    }

    /// Copies the pending messages without removing them, oldest first.
    ///
    /// # Safety
    ///
    /// No `drain` may run concurrently: the consumer frees nodes as it
    /// drains. Concurrent pushes are fine.
    pub unsafe fn peek_cloned(&self) -> Vec<T>
    where
        T: Clone,
    {
        let mut cur = self.head.load(Ordering::SeqCst);
        let mut out = Vec::new();
        while !cur.is_null() {
            out.push((*cur).value.clone());
            cur = (*cur).next;
        }
        out.reverse();
        out
    }
}

impl<T> Drop for Inbox<T> {
    fn drop(&mut self) {
        drop(self.drain());
    }
}
