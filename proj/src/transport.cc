/*
 * Copyright 2026 The vflhssl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "vflhssl/transport.h"

#include <exception>
#include <thread>

#include "vflhssl/bytes.h"
#include "vflhssl/errors.h"

namespace vflhssl {

std::string ToString(MsgType t) {
  switch (t) {
    case MsgType::kRepr:
      return "Repr";
    case MsgType::kGrad:
      return "Grad";
    case MsgType::kModelBlob:
      return "ModelBlob";
    case MsgType::kControl:
      return "Control";
  }
  return "Unknown";
}

std::string ToString(ExecutionMode m) {
  return m == ExecutionMode::kScheduler ? "scheduler" : "threaded";
}

WireMessage WireMessage::Shaped(MsgType type, const Matrix& m) {
  WireMessage msg;
  msg.type = type;
  msg.dims = {static_cast<uint32_t>(m.rows), static_cast<uint32_t>(m.cols)};
  msg.values = m.data;
  return msg;
}

WireMessage WireMessage::ModelBlob(std::string bytes) {
  WireMessage msg;
  msg.type = MsgType::kModelBlob;
  msg.dims = {static_cast<uint32_t>(bytes.size())};
  msg.blob = std::move(bytes);
  return msg;
}

Matrix WireMessage::AsMatrix() const {
  if (type == MsgType::kModelBlob || dims.size() != 2) {
    throw ProtocolError(ToString(type) + " message is not a 2-D block");
  }
  return Matrix(dims[0], dims[1], values);
}

std::string EncodeFrame(const WireMessage& msg) {
  ByteWriter w;
  w.Raw(std::string_view(kWireMagic, 4));
  w.U16(kWireVersion);
  w.U8(static_cast<uint8_t>(msg.type));
  w.U32(msg.round);
  w.U16(msg.sender);
  if (msg.dims.size() > 255) throw ProtocolError("too many dims for a frame");
  w.U8(static_cast<uint8_t>(msg.dims.size()));
  for (uint32_t d : msg.dims) w.U32(d);
  if (msg.type == MsgType::kModelBlob) {
    if (msg.dims.size() != 1 || msg.dims[0] != msg.blob.size()) {
      throw ProtocolError("ModelBlob dims do not match blob length");
    }
    w.Raw(msg.blob);
  } else {
    size_t expected = msg.dims.empty() ? 0 : 1;
    for (uint32_t d : msg.dims) expected *= d;
    if (expected != msg.values.size()) {
      throw ProtocolError("payload length " + std::to_string(msg.values.size()) +
                          " does not match shape header");
    }
    for (double v : msg.values) w.F64(v);
  }
  return w.Take();
}

WireMessage DecodeFrame(std::string_view frame) {
  try {
    ByteReader r(frame);
    if (r.Raw(4) != std::string_view(kWireMagic, 4)) throw ProtocolError("malformed frame: bad magic");
    if (r.U16() != kWireVersion) throw ProtocolError("malformed frame: unsupported version");
    WireMessage msg;
    const uint8_t type = r.U8();
    if (type < 1 || type > 4) throw ProtocolError("malformed frame: unknown msg_type");
    msg.type = static_cast<MsgType>(type);
    msg.round = r.U32();
    msg.sender = r.U16();
    const uint8_t ndim = r.U8();
    for (uint8_t i = 0; i < ndim; ++i) msg.dims.push_back(r.U32());
    if (msg.type == MsgType::kModelBlob) {
      if (ndim != 1) throw ProtocolError("malformed frame: ModelBlob needs one dim");
      msg.blob = std::string(r.Raw(msg.dims[0]));
    } else {
      size_t count = ndim == 0 ? 0 : 1;
      for (uint32_t d : msg.dims) count *= d;
      if (r.remaining() != count * sizeof(double)) {
        throw ProtocolError("malformed frame: payload length does not match shape header");
      }
      msg.values.resize(count);
      for (double& v : msg.values) v = r.F64();
    }
    if (r.remaining() != 0) throw ProtocolError("malformed frame: trailing bytes");
    return msg;
  } catch (const TruncatedError& e) {
    throw ProtocolError(std::string("malformed frame: ") + e.what());
  }
}

// ---- Network ----------------------------------------------------------------

Network::Network(size_t participants, bool blocking)
    : participants_(participants), blocking_(blocking) {
  channels_.reserve(participants * participants);
  for (size_t i = 0; i < participants * participants; ++i)
    channels_.push_back(std::make_unique<Channel>());
}

void Network::CheckIndex(size_t i) const {
  if (i >= participants_) {
    throw ProtocolError("participant " + std::to_string(i) + " outside network of " +
                        std::to_string(participants_));
  }
}

Network::Channel& Network::channel(size_t from, size_t to) {
  CheckIndex(from);
  CheckIndex(to);
  return *channels_[from * participants_ + to];
}

void Network::Send(size_t from, size_t to, WireMessage msg) {
  Channel& ch = channel(from, to);
  std::string frame;
  {
    std::lock_guard<std::mutex> lock(ch.mu);
    if (ch.closed) throw ChannelClosedError("send on closed channel");
    msg.sender = static_cast<uint16_t>(from);
    msg.round = ch.next_round[static_cast<size_t>(msg.type)]++;
    frame = EncodeFrame(msg);
  }
  {
    std::lock_guard<std::mutex> lock(stats_mu_);
    stats_.sent[msg.type]++;
    stats_.bytes[msg.type] += frame.size();
    by_sender_[{from, msg.type}]++;
  }
  SendRaw(from, to, std::move(frame));
}

void Network::SendRaw(size_t from, size_t to, std::string frame) {
  Channel& ch = channel(from, to);
  {
    std::lock_guard<std::mutex> lock(ch.mu);
    if (ch.closed) throw ChannelClosedError("send on closed channel");
    ch.frames.push_back(std::move(frame));
  }
  ch.cv.notify_all();
}

WireMessage Network::Recv(size_t to, size_t from, MsgType expected) {
  Channel& ch = channel(from, to);
  std::string frame;
  WireMessage msg;
  {
    std::unique_lock<std::mutex> lock(ch.mu);
    if (blocking_) {
      ch.cv.wait(lock, [&] { return ch.closed || !ch.frames.empty(); });
    }
    if (ch.frames.empty()) {
      if (ch.closed) throw ChannelClosedError("receive on closed channel");
      throw ProtocolError("participant " + std::to_string(to) + " expected " +
                          ToString(expected) + " from " + std::to_string(from) +
                          " but the channel is empty");
    }
    frame = std::move(ch.frames.front());
    ch.frames.pop_front();
    msg = DecodeFrame(frame);
    if (msg.type != expected) {
      throw ProtocolError("expected " + ToString(expected) + " from " + std::to_string(from) +
                          ", got " + ToString(msg.type));
    }
    if (msg.sender != from) throw ProtocolError("frame sender does not match channel");
    uint32_t& last = ch.last_round[static_cast<size_t>(msg.type)];
    if (msg.round <= last) {
      throw ProtocolError("round regression on " + ToString(msg.type) + " stream from " +
                          std::to_string(from) + ": " + std::to_string(msg.round) +
                          " after " + std::to_string(last));
    }
    last = msg.round;
  }
  return msg;
}

void Network::Close() {
  for (auto& ch : channels_) {
    {
      std::lock_guard<std::mutex> lock(ch->mu);
      ch->closed = true;
    }
    ch->cv.notify_all();
  }
}

MessageStats Network::stats() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  return stats_;
}

void Network::ResetStats() {
  std::lock_guard<std::mutex> lock(stats_mu_);
  stats_ = {};
  by_sender_.clear();
}

size_t Network::SentBy(size_t sender, MsgType type) const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  auto it = by_sender_.find({sender, type});
  return it == by_sender_.end() ? 0 : it->second;
}

// ---- Execution ---------------------------------------------------------------

void RunParticipants(ExecutionMode mode, Network& net, size_t participants, size_t phases,
                     const std::function<void(size_t, size_t)>& fn) {
  if (mode == ExecutionMode::kScheduler) {
    net.set_blocking(false);
    for (size_t phase = 0; phase < phases; ++phase)
      for (size_t p = 0; p < participants; ++p) fn(p, phase);
    return;
  }
  net.set_blocking(true);
  std::vector<std::exception_ptr> errors(participants);
  std::vector<std::thread> workers;
  workers.reserve(participants);
  for (size_t p = 0; p < participants; ++p) {
    workers.emplace_back([&, p] {
      try {
        for (size_t phase = 0; phase < phases; ++phase) fn(p, phase);
      } catch (...) {
        errors[p] = std::current_exception();
        net.Close();
      }
    });
  }
  for (auto& w : workers) w.join();
  // Prefer the root cause over secondary closed-channel errors.
  std::exception_ptr first;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const ChannelClosedError&) {
      if (!first) first = e;
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace vflhssl
