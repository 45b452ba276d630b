//! Multi-room chat service: durable rooms plus the HTTP protocol agents and
//! browser clients talk to.

pub mod http;
pub mod store;

pub use http::{router, serve, MAX_WAIT_MS};
pub use store::{
    valid_room_id, ChatStore, NewMessage, Participant, Posted, Room, RoomInfo, StoreError,
    StoreOptions,
};
