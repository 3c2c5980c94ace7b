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
#ifndef VFLHSSL_TRANSPORT_H_
#define VFLHSSL_TRANSPORT_H_

#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "vflhssl/tensor.h"

namespace vflhssl {

enum class MsgType : uint8_t { kRepr = 1, kGrad = 2, kModelBlob = 3, kControl = 4 };
std::string ToString(MsgType t);

inline constexpr char kWireMagic[4] = {'V', 'F', 'L', 'M'};
inline constexpr uint16_t kWireVersion = 1;

// One protocol unit. Shaped payloads carry f64 values; ModelBlob carries an
// encoded parameter blob (its single dim is the byte length).
struct WireMessage {
  MsgType type = MsgType::kControl;
  uint32_t round = 0;
  uint16_t sender = 0;
  std::vector<uint32_t> dims;
  std::vector<double> values;
  std::string blob;

  static WireMessage Shaped(MsgType type, const Matrix& m);
  static WireMessage ModelBlob(std::string bytes);
  Matrix AsMatrix() const;

  bool operator==(const WireMessage&) const = default;
};

// Frame: magic "VFLM", u16 version, u8 msg_type, u32 round, u16 sender,
// u8 ndim, ndim x u32 dims, then the payload (little-endian).
std::string EncodeFrame(const WireMessage& msg);
WireMessage DecodeFrame(std::string_view frame);

struct MessageStats {
  std::map<MsgType, size_t> sent;
  std::map<MsgType, size_t> bytes;

  size_t count(MsgType t) const {
    auto it = sent.find(t);
    return it == sent.end() ? 0 : it->second;
  }
};

// In-process message network with one FIFO channel per directed pair of
// participants. Frames travel in their binary encoding.
class Network {
 public:
  // `blocking` selects blocking receives (threaded mode); otherwise an empty
  // channel on receive is a protocol error (scheduler mode).
  Network(size_t participants, bool blocking);

  // Assigns the next round number of the (from, to, type) stream.
  void Send(size_t from, size_t to, WireMessage msg);
  WireMessage Recv(size_t to, size_t from, MsgType expected);
  // Delivers an already-encoded frame, bypassing round assignment.
  void SendRaw(size_t from, size_t to, std::string frame);
  // Wakes all blocked receivers; further traffic raises ChannelClosedError.
  void Close();

  size_t participants() const { return participants_; }
  bool blocking() const { return blocking_; }
  void set_blocking(bool b) { blocking_ = b; }
  MessageStats stats() const;
  void ResetStats();
  // Messages from `sender` observed by all channels, per type.
  size_t SentBy(size_t sender, MsgType type) const;

 private:
  struct Channel {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> frames;
    uint32_t next_round[5] = {1, 1, 1, 1, 1};
    uint32_t last_round[5] = {0, 0, 0, 0, 0};
    bool closed = false;
  };
  Channel& channel(size_t from, size_t to);
  void CheckIndex(size_t i) const;

  size_t participants_;
  bool blocking_;
  std::vector<std::unique_ptr<Channel>> channels_;
  mutable std::mutex stats_mu_;
  MessageStats stats_;
  std::map<std::pair<size_t, MsgType>, size_t> by_sender_;
};

enum class ExecutionMode { kScheduler, kThreaded };
std::string ToString(ExecutionMode m);

// Runs `fn(participant, phase)` for every participant and phase. Scheduler
// mode interleaves participants round-robin, phase by phase, on the calling
// thread. Threaded mode gives each participant its own thread that walks its
// phases in order, synchronizing only through blocking receives. The first
// exception closes the network and is rethrown.
void RunParticipants(ExecutionMode mode, Network& net, size_t participants, size_t phases,
                     const std::function<void(size_t, size_t)>& fn);

}  // namespace vflhssl

#endif  // VFLHSSL_TRANSPORT_H_
